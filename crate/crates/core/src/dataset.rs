//! Corpus manifests, gold labels, instructions and test-case files.
//!
//! A case is one (website, attribute) pair: a page sample, the gold values
//! of each page and the instruction given to the model. HTML stays on disk
//! and is referenced by path relative to the corpus root.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::derive_seed;
use crate::dom::{normalize_value, parse_html, preprocess, DocumentTree, DomError};

pub const DEFAULT_SAMPLE: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("referenced file does not exist: {0}")]
    MissingFile(String),
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error("no gold record for page {page} of {website}, attribute {attribute}")]
    MissingGold {
        website: String,
        page: String,
        attribute: String,
    },
    #[error("no instruction for {domain}/{attribute}")]
    MissingTemplate { domain: String, attribute: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("{path}: {source}")]
    Html { path: String, source: DomError },
}

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageEntry {
    pub id: String,
    /// Relative to the corpus root.
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum GoldSource {
    /// JSON lines of [`GoldRecord`].
    Jsonl { path: PathBuf },
    /// One SWDE groundtruth file per attribute.
    Swde { files: BTreeMap<String, PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WebsiteEntry {
    pub domain: String,
    pub website: String,
    pub pages: Vec<PageEntry>,
    pub gold: GoldSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    /// Corpus root; relative paths resolve against the manifest's directory.
    pub root: PathBuf,
    /// Attribute ids per domain.
    pub attributes: BTreeMap<String, Vec<String>>,
    pub websites: Vec<WebsiteEntry>,
    /// Optional instruction overrides, relative to the root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructions: Option<PathBuf>,
    /// Optional relation-to-attribute mapping, relative to the root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_map: Option<PathBuf>,
}

impl CorpusManifest {
    /// Reads a manifest, resolves its root and checks that every referenced
    /// file exists and matches its checksum.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = read_text(path)?;
        let mut m: CorpusManifest = serde_json::from_str(&text)
            .map_err(|e| DataError::SchemaViolation(format!("{}: {e}", path.display())))?;
        if m.root.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            m.root = base.join(&m.root);
        }
        m.verify()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| io_err(path, e))
    }

    pub fn page_counts(&self) -> BTreeMap<String, usize> {
        self.websites
            .iter()
            .map(|w| (format!("{}/{}", w.domain, w.website), w.pages.len()))
            .collect()
    }

    fn must_exist(&self, rel: &Path) -> Result<PathBuf, DataError> {
        let p = self.root.join(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(DataError::MissingFile(p.display().to_string()))
        }
    }

    pub fn verify(&self) -> Result<(), DataError> {
        for w in &self.websites {
            if !self.attributes.contains_key(&w.domain) {
                return Err(DataError::SchemaViolation(format!(
                    "domain {} has no attribute list",
                    w.domain
                )));
            }
            let mut seen = BTreeSet::new();
            for p in &w.pages {
                if !seen.insert(&p.id) {
                    return Err(DataError::SchemaViolation(format!(
                        "duplicate page id {} in {}",
                        p.id, w.website
                    )));
                }
                let full = self.must_exist(&p.path)?;
                if let Some(sum) = &p.checksum {
                    let bytes = fs::read(&full).map_err(|e| io_err(&full, e))?;
                    if &checksum(&bytes) != sum {
                        return Err(DataError::ChecksumMismatch(full.display().to_string()));
                    }
                }
            }
            match &w.gold {
                GoldSource::Jsonl { path } => {
                    self.must_exist(path)?;
                }
                GoldSource::Swde { files } => {
                    for f in files.values() {
                        self.must_exist(f)?;
                    }
                }
            }
        }
        for extra in [&self.instructions, &self.relation_map]
            .into_iter()
            .flatten()
        {
            self.must_exist(extra)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldRecord {
    pub page: String,
    pub attribute: String,
    pub values: Vec<String>,
}

pub fn parse_gold_jsonl(text: &str) -> Result<Vec<GoldRecord>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| DataError::SchemaViolation(format!("gold line {}: {e}", i + 1)))
        })
        .collect()
}

/// Parses an SWDE groundtruth file: a header line
/// (`domain\twebsite\tattribute`), a count line, then one line per page
/// with the page id, the number of values and the values. `<NULL>` marks
/// absence.
pub fn parse_swde_groundtruth(text: &str) -> Result<Vec<GoldRecord>, DataError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| DataError::SchemaViolation("empty groundtruth file".into()))?;
    let attribute = header
        .split('\t')
        .nth(2)
        .ok_or_else(|| DataError::SchemaViolation(format!("bad groundtruth header `{header}`")))?
        .trim()
        .to_string();
    lines.next();
    let mut out = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut cols = line.split('\t');
        let page = cols.next().unwrap_or_default().trim().to_string();
        cols.next();
        let values = cols
            .map(str::trim)
            .filter(|v| !v.is_empty() && *v != "<NULL>")
            .map(String::from)
            .collect();
        out.push(GoldRecord {
            page,
            attribute: attribute.clone(),
            values,
        });
    }
    Ok(out)
}

/// Maps relation names found in gold records onto attribute ids, per
/// domain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationMap(pub BTreeMap<String, BTreeMap<String, String>>);

impl RelationMap {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        serde_json::from_str(&read_text(path)?)
            .map_err(|e| DataError::SchemaViolation(format!("{}: {e}", path.display())))
    }

    pub fn attribute<'a>(&'a self, domain: &str, relation: &'a str) -> &'a str {
        self.0
            .get(domain)
            .and_then(|m| m.get(relation))
            .map_or(relation, String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainInstructions {
    pub preamble: String,
    pub attributes: BTreeMap<String, String>,
}

/// Task preamble per domain plus one prompt per attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTable {
    pub domains: BTreeMap<String, DomainInstructions>,
}

/// (domain, preamble, [(attribute, prompt)]).
type Builtin = (
    &'static str,
    &'static str,
    &'static [(&'static str, &'static str)],
);

const BUILTIN: &[Builtin] = &[
    (
        "auto",
        "Here's a webpage with detailed information about an auto.",
        &[
            ("model", "Please extract the model of the auto."),
            ("price", "Please extract the price of the auto."),
            ("engine", "Please extract the engine of the auto."),
            (
                "fuel_economy",
                "Please extract the fuel efficiency of the auto.",
            ),
        ],
    ),
    (
        "book",
        "Here's a webpage with detailed information about a book.",
        &[
            ("title", "Please extract the title of the book."),
            ("author", "Please extract the author of the book."),
            ("isbn_13", "Please extract the isbn number of the book."),
            ("publisher", "Please extract the publisher of the book."),
            (
                "publication_date",
                "Please extract the publication date of the book.",
            ),
        ],
    ),
    (
        "camera",
        "Here's a webpage with detail information of camera.",
        &[
            ("model", "Please extract the product name of the camera."),
            ("price", "Please extract the sale price of the camera."),
            (
                "manufacturer",
                "Please extract the manufacturer of the camera.",
            ),
        ],
    ),
    (
        "job",
        "Here's a webpage with detailed information about a job.",
        &[
            ("title", "Please extract the title of the job."),
            (
                "company",
                "Please extract the name of the company that offers the job.",
            ),
            (
                "location",
                "Please extract the working location of the job.",
            ),
            ("date_posted", "Please extract the date that post the job."),
        ],
    ),
    (
        "movie",
        "Here's a webpage with detailed information about a movie.",
        &[
            ("title", "Please extract the title of the movie."),
            ("director", "Please extract the director of the movie."),
            ("genre", "Please extract the genre of the movie."),
            (
                "mpaa_rating",
                "Please extract the MPAA rating of the movie.",
            ),
        ],
    ),
    (
        "nbaplayer",
        "Here's a webpage with detailed information about an NBA player.",
        &[
            ("name", "Please extract the name of the player."),
            (
                "team",
                "Please extract the team of the player he plays now.",
            ),
            ("height", "Please extract the height of the player."),
            ("weight", "Please extract the weight of the player."),
        ],
    ),
    (
        "restaurant",
        "Here's a webpage with detailed information about a restaurant.",
        &[
            ("name", "Please extract the restaurant's name."),
            ("address", "Please extract the restaurant's address."),
            ("phone", "Please extract the restaurant's phone number."),
            (
                "cuisine",
                "Please extract the cuisine that the restaurant offers.",
            ),
        ],
    ),
    (
        "university",
        "Here's a webpage on detailed information about a university.",
        &[
            ("name", "Please extract the name of the university."),
            (
                "phone",
                "Please extract the contact phone number of the university.",
            ),
            (
                "website",
                "Please extract the website url of the university.",
            ),
            ("type", "Please extract the type of the university."),
        ],
    ),
];

impl Default for InstructionTable {
    fn default() -> Self {
        let domains = BUILTIN
            .iter()
            .map(|(d, pre, attrs)| {
                (
                    d.to_string(),
                    DomainInstructions {
                        preamble: pre.to_string(),
                        attributes: attrs
                            .iter()
                            .map(|(a, p)| (a.to_string(), p.to_string()))
                            .collect(),
                    },
                )
            })
            .collect();
        InstructionTable { domains }
    }
}

impl InstructionTable {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        serde_json::from_str(&read_text(path)?)
            .map_err(|e| DataError::SchemaViolation(format!("{}: {e}", path.display())))
    }

    /// Entries of `other` replace or extend this table.
    pub fn merge(&mut self, other: InstructionTable) {
        for (d, inst) in other.domains {
            match self.domains.get_mut(&d) {
                Some(cur) => {
                    if !inst.preamble.is_empty() {
                        cur.preamble = inst.preamble;
                    }
                    cur.attributes.extend(inst.attributes);
                }
                None => {
                    self.domains.insert(d, inst);
                }
            }
        }
    }

    pub fn attribute_prompt(&self, domain: &str, attribute: &str) -> Option<&str> {
        self.domains
            .get(domain)?
            .attributes
            .get(attribute)
            .map(String::as_str)
    }

    /// Preamble followed by the attribute prompt.
    pub fn instruction(&self, domain: &str, attribute: &str) -> Result<String, DataError> {
        let missing = || DataError::MissingTemplate {
            domain: domain.to_string(),
            attribute: attribute.to_string(),
        };
        let d = self.domains.get(domain).ok_or_else(missing)?;
        let prompt = d.attributes.get(attribute).ok_or_else(missing)?;
        Ok(if d.preamble.is_empty() {
            prompt.clone()
        } else {
            format!("{} {}", d.preamble, prompt)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CasePage {
    pub id: String,
    /// Relative to the case root.
    pub html_path: PathBuf,
    pub gold: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WebpageCase {
    pub domain: String,
    pub website: String,
    pub attribute: String,
    pub instruction: String,
    pub root: PathBuf,
    pub pages: Vec<CasePage>,
}

impl WebpageCase {
    pub fn id(&self) -> String {
        format!("{}-{}-{}", self.domain, self.website, self.attribute)
    }

    pub fn page_ids(&self) -> Vec<String> {
        self.pages.iter().map(|p| p.id.clone()).collect()
    }

    pub fn page(&self, id: &str) -> Option<&CasePage> {
        self.pages.iter().find(|p| p.id == id)
    }

    pub fn html_path(&self, page: &CasePage) -> PathBuf {
        self.root.join(&page.html_path)
    }

    /// Reads, parses and preprocesses one page.
    pub fn load_page(&self, page: &CasePage) -> Result<DocumentTree, DataError> {
        load_page_file(&self.html_path(page), &page.id)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.instruction.trim().is_empty() {
            return Err(DataError::SchemaViolation(format!(
                "case {} has an empty instruction",
                self.id()
            )));
        }
        let mut seen = BTreeSet::new();
        for p in &self.pages {
            if !seen.insert(&p.id) {
                return Err(DataError::SchemaViolation(format!(
                    "case {} repeats page id {}",
                    self.id(),
                    p.id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let case: WebpageCase =
            serde_json::from_str(text).map_err(|e| DataError::SchemaViolation(e.to_string()))?;
        case.validate()?;
        Ok(case)
    }
}

/// Reads, parses and preprocesses the page at `path`.
pub fn load_page_file(path: &Path, id: &str) -> Result<DocumentTree, DataError> {
    let raw = read_text(path)?;
    let tree = parse_html(&raw, id).map_err(|source| DataError::Html {
        path: path.display().to_string(),
        source,
    })?;
    Ok(preprocess(&tree))
}

pub fn save_case(case: &WebpageCase, path: &Path) -> Result<(), DataError> {
    fs::write(path, case.to_json()).map_err(|e| io_err(path, e))
}

pub fn load_case(path: &Path) -> Result<WebpageCase, DataError> {
    WebpageCase::from_json(&read_text(path)?)
}

/// Deduplicated, normalized, non-empty gold values in first-seen order.
pub fn normalize_gold(values: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    values
        .iter()
        .map(|v| normalize_value(v))
        .filter(|v| !v.is_empty() && seen.insert(v.clone()))
        .collect()
}

fn load_gold(
    manifest: &CorpusManifest,
    site: &WebsiteEntry,
    relations: &RelationMap,
) -> Result<BTreeMap<(String, String), Vec<String>>, DataError> {
    let records = match &site.gold {
        GoldSource::Jsonl { path } => parse_gold_jsonl(&read_text(&manifest.root.join(path))?)?,
        GoldSource::Swde { files } => {
            let mut all = Vec::new();
            for f in files.values() {
                all.extend(parse_swde_groundtruth(&read_text(&manifest.root.join(f))?)?);
            }
            all
        }
    };
    let mut out = BTreeMap::new();
    for r in records {
        let attr = relations.attribute(&site.domain, &r.attribute).to_string();
        out.entry((r.page, attr))
            .or_insert_with(Vec::new)
            .extend(r.values);
    }
    Ok(out)
}

/// One case per (website, attribute). Each website's page sample is drawn
/// once and shared by its attributes.
pub fn build_cases(
    manifest: &CorpusManifest,
    sample_n: usize,
    seed: u64,
) -> Result<Vec<WebpageCase>, DataError> {
    let mut table = InstructionTable::default();
    if let Some(p) = &manifest.instructions {
        table.merge(InstructionTable::load(&manifest.root.join(p))?);
    }
    let relations = match &manifest.relation_map {
        Some(p) => RelationMap::load(&manifest.root.join(p))?,
        None => RelationMap::default(),
    };
    let mut cases = Vec::new();
    for site in &manifest.websites {
        let attributes = manifest.attributes.get(&site.domain).ok_or_else(|| {
            DataError::SchemaViolation(format!("domain {} has no attribute list", site.domain))
        })?;
        let gold = load_gold(manifest, site, &relations)?;
        let n = sample_n.min(site.pages.len());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            &format!("{}/{}", site.domain, site.website),
        ));
        let mut picked = rand::seq::index::sample(&mut rng, site.pages.len(), n).into_vec();
        picked.sort_unstable();
        for attribute in attributes {
            let instruction = table.instruction(&site.domain, attribute)?;
            let pages = picked
                .iter()
                .map(|&i| {
                    let p = &site.pages[i];
                    let values = gold
                        .get(&(p.id.clone(), attribute.clone()))
                        .ok_or_else(|| DataError::MissingGold {
                            website: site.website.clone(),
                            page: p.id.clone(),
                            attribute: attribute.clone(),
                        })?;
                    Ok(CasePage {
                        id: p.id.clone(),
                        html_path: p.path.clone(),
                        gold: normalize_gold(values),
                    })
                })
                .collect::<Result<Vec<_>, DataError>>()?;
            cases.push(WebpageCase {
                domain: site.domain.clone(),
                website: site.website.clone(),
                attribute: attribute.clone(),
                instruction,
                root: manifest.root.clone(),
                pages,
            });
        }
    }
    Ok(cases)
}

/// Builds a manifest for an SWDE-style directory: pages under
/// `<domain>/<domain>-<website>(<n>)/NNNN.htm` and gold under
/// `groundtruth/<domain>/<domain>-<website>-<attribute>.txt`.
pub fn scan_swde(root: &Path) -> Result<CorpusManifest, DataError> {
    let mut websites = Vec::new();
    let mut attributes: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut domains: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n != "groundtruth"))
        .collect();
    domains.sort();
    for ddir in domains {
        let domain = ddir.file_name().unwrap().to_string_lossy().to_string();
        let mut sites: Vec<PathBuf> = fs::read_dir(&ddir)
            .map_err(|e| io_err(&ddir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        sites.sort();
        for sdir in sites {
            let dirname = sdir.file_name().unwrap().to_string_lossy().to_string();
            let website = dirname
                .strip_prefix(&format!("{domain}-"))
                .unwrap_or(&dirname)
                .split('(')
                .next()
                .unwrap_or_default()
                .to_string();
            let mut pages: Vec<PageEntry> = fs::read_dir(&sdir)
                .map_err(|e| io_err(&sdir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "htm" || x == "html"))
                .map(|p| PageEntry {
                    id: p.file_stem().unwrap().to_string_lossy().to_string(),
                    path: p.strip_prefix(root).unwrap_or(&p).to_path_buf(),
                    checksum: None,
                })
                .collect();
            pages.sort_by(|a, b| a.id.cmp(&b.id));
            let gdir = root.join("groundtruth").join(&domain);
            let prefix = format!("{domain}-{website}-");
            let mut files = BTreeMap::new();
            if let Ok(entries) = fs::read_dir(&gdir) {
                for e in entries.filter_map(Result::ok) {
                    let name = e.file_name().to_string_lossy().to_string();
                    if let Some(attr) = name
                        .strip_prefix(&prefix)
                        .and_then(|s| s.strip_suffix(".txt"))
                    {
                        attributes
                            .entry(domain.clone())
                            .or_default()
                            .insert(attr.to_string());
                        let p = e.path();
                        files.insert(
                            attr.to_string(),
                            p.strip_prefix(root).unwrap_or(&p).to_path_buf(),
                        );
                    }
                }
            }
            websites.push(WebsiteEntry {
                domain: domain.clone(),
                website,
                pages,
                gold: GoldSource::Swde { files },
            });
        }
    }
    Ok(CorpusManifest {
        root: root.to_path_buf(),
        attributes: attributes
            .into_iter()
            .map(|(d, a)| (d, a.into_iter().collect()))
            .collect(),
        websites,
        instructions: None,
        relation_map: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, rel: &str, text: &str) {
        let p = dir.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, text).unwrap();
    }

    fn corpus(pages: usize) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let mut entries = Vec::new();
        let mut gold = String::new();
        for i in 0..pages {
            let id = format!("{i:04}");
            let html = format!("<html><body><p class=\"h\">{i}&amp;x</p></body></html>");
            write(root, &format!("site/{id}.htm"), &html);
            entries.push(PageEntry {
                id: id.clone(),
                path: PathBuf::from(format!("site/{id}.htm")),
                checksum: Some(checksum(html.as_bytes())),
            });
            for attr in ["height", "weight"] {
                let rec = GoldRecord {
                    page: id.clone(),
                    attribute: attr.into(),
                    values: vec![format!(" {i}&amp;x ")],
                };
                gold.push_str(&serde_json::to_string(&rec).unwrap());
                gold.push('\n');
            }
        }
        write(root, "gold.jsonl", &gold);
        let m = CorpusManifest {
            root: PathBuf::from("."),
            attributes: BTreeMap::from([(
                "nbaplayer".to_string(),
                vec!["height".to_string(), "weight".to_string()],
            )]),
            websites: vec![WebsiteEntry {
                domain: "nbaplayer".into(),
                website: "espn".into(),
                pages: entries,
                gold: GoldSource::Jsonl {
                    path: "gold.jsonl".into(),
                },
            }],
            instructions: None,
            relation_map: None,
        };
        let mp = root.join("manifest.json");
        m.save(&mp).unwrap();
        (dir, mp)
    }

    #[test]
    fn sampling_clamps_and_is_deterministic() {
        let (_d, mp) = corpus(140);
        let m = CorpusManifest::load(&mp).unwrap();
        let a = build_cases(&m, 100, 1).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].pages.len(), 100);
        assert_eq!(a, build_cases(&m, 100, 1).unwrap());
        assert_ne!(
            a[0].page_ids(),
            build_cases(&m, 100, 2).unwrap()[0].page_ids()
        );
        // Shared across attributes of one website.
        assert_eq!(a[0].page_ids(), a[1].page_ids());
        let small = build_cases(&m, 400, 1).unwrap();
        assert_eq!(small[0].pages.len(), 140);
    }

    #[test]
    fn gold_is_normalized_like_page_text() {
        let (_d, mp) = corpus(3);
        let m = CorpusManifest::load(&mp).unwrap();
        let c = &build_cases(&m, 100, 1).unwrap()[0];
        assert_eq!(c.pages[0].gold, vec!["0&x"]);
        let tree = c.load_page(&c.pages[0]).unwrap();
        assert_eq!(tree.text_content(), "0&x");
    }

    #[test]
    fn instruction_from_table() {
        let t = InstructionTable::default();
        assert_eq!(
            t.attribute_prompt("nbaplayer", "height"),
            Some("Please extract the height of the player.")
        );
        assert_eq!(
            t.instruction("nbaplayer", "height").unwrap(),
            "Here's a webpage with detailed information about an NBA player. Please extract the height of the player."
        );
        assert!(matches!(
            t.instruction("nbaplayer", "salary"),
            Err(DataError::MissingTemplate { .. })
        ));
    }

    #[test]
    fn missing_gold_and_files() {
        let (d, mp) = corpus(3);
        fs::write(d.path().join("gold.jsonl"), "").unwrap();
        let m = CorpusManifest::load(&mp).unwrap();
        assert!(matches!(
            build_cases(&m, 100, 1),
            Err(DataError::MissingGold { .. })
        ));
        fs::remove_file(d.path().join("site/0001.htm")).unwrap();
        assert!(matches!(
            CorpusManifest::load(&mp),
            Err(DataError::MissingFile(_))
        ));
    }

    #[test]
    fn checksum_mismatch_detected() {
        let (d, mp) = corpus(2);
        fs::write(d.path().join("site/0000.htm"), "<p>changed</p>").unwrap();
        assert!(matches!(
            CorpusManifest::load(&mp),
            Err(DataError::ChecksumMismatch(_))
        ));
    }

    #[test]
    fn case_missing_gold_field_is_schema_violation() {
        let text = r#"{"domain":"d","website":"w","attribute":"a","instruction":"i","root":".","pages":[{"id":"0","html_path":"x.htm"}]}"#;
        assert!(matches!(
            WebpageCase::from_json(text),
            Err(DataError::SchemaViolation(_))
        ));
    }

    #[test]
    fn swde_groundtruth_parsing() {
        let text = "nbaplayer\tespn\theight\n2\n0000\t1\t6-9\n0001\t0\t<NULL>\n";
        let r = parse_swde_groundtruth(text).unwrap();
        assert_eq!(r[0].values, vec!["6-9"]);
        assert_eq!(r[0].attribute, "height");
        assert!(r[1].values.is_empty());
    }

    #[test]
    fn swde_directory_scan() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write(root, "nbaplayer/nbaplayer-espn(2)/0000.htm", "<p>6-9</p>");
        write(root, "nbaplayer/nbaplayer-espn(2)/0001.htm", "<p>7-0</p>");
        write(
            root,
            "groundtruth/nbaplayer/nbaplayer-espn-height.txt",
            "nbaplayer\tespn\theight\n2\n0000\t1\t6-9\n0001\t1\t7-0\n",
        );
        let m = scan_swde(root).unwrap();
        assert_eq!(m.page_counts()["nbaplayer/espn"], 2);
        let cases = build_cases(&m, 100, 0).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].pages[1].gold, vec!["7-0"]);
    }

    #[test]
    fn relation_map_renames_attributes() {
        let rm = RelationMap(BTreeMap::from([(
            "nbaplayer".to_string(),
            BTreeMap::from([("height_ft".to_string(), "height".to_string())]),
        )]));
        assert_eq!(rm.attribute("nbaplayer", "height_ft"), "height");
        assert_eq!(rm.attribute("nbaplayer", "team"), "team");
    }

    proptest! {
        #[test]
        fn case_round_trip(
            gold in proptest::collection::vec("\\PC{0,12}", 0..4),
            instruction in "\\PC{1,40}",
        ) {
            prop_assume!(!instruction.trim().is_empty());
            let case = WebpageCase {
                domain: "d".into(),
                website: "w".into(),
                attribute: "a".into(),
                instruction,
                root: PathBuf::from("/corpus"),
                pages: vec![CasePage { id: "0".into(), html_path: "p.htm".into(), gold }],
            };
            let text = case.to_json();
            let back = WebpageCase::from_json(&text).unwrap();
            prop_assert_eq!(&back, &case);
            prop_assert_eq!(back.to_json(), text);
        }
    }
}
