//! Synthetic templated corpus with a matching deterministic responder.
//!
//! Every website renders its pages from one template. The responder plays a
//! model that first points at a decoy sibling of the value (so the step-back
//! lands on the record container) and, once shown the pruned container,
//! answers with the class-anchored xpath. On outlier pages it answers with a
//! literal-bound xpath that only works on that page.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::dataset::{
    build_cases, checksum, io_err, CorpusManifest, DataError, GoldRecord, GoldSource,
    InstructionTable, PageEntry, WebsiteEntry,
};
use crate::derive_seed;
use crate::dom::parse_html;
use crate::exec::{eval_text, ExtractionStatus, Strategy};
use crate::generation::{generate, StrategyConfig};
use crate::llm::{
    tree_contains, values_consistent, Backend, BackendConfig, BackendRequest, Gateway, JudgeMode,
    LlmError, LogicalClock, RecordingBackend, ScriptTable, TemplateName,
};
use crate::synthesis::{case_seed, select_seeds};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureSpec {
    pub websites: usize,
    pub pages: usize,
    /// Run seed the corpus is built for; outlier pages are placed where
    /// a one-seed run with this seed will draw them.
    pub seed: u64,
    pub outliers: bool,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            websites: 10,
            pages: 20,
            seed: 0,
            outliers: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Card,
    Table,
    Definition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Title,
    Person,
    Team,
    Phone,
}

#[derive(Debug, Clone)]
struct AttrSpec {
    attribute: &'static str,
    kind: Kind,
    tag: &'static str,
    class: String,
    multi: bool,
}

impl AttrSpec {
    fn xpath(&self) -> String {
        format!("//{}[@class='{}']", self.tag, self.class)
    }
}

#[derive(Debug, Clone)]
struct SiteSpec {
    domain: &'static str,
    website: String,
    prefix: String,
    layout: Layout,
    attrs: [AttrSpec; 2],
    /// The first full-page reply is prose instead of JSON.
    chatty: bool,
}

impl SiteSpec {
    fn decoy_xpath(&self) -> String {
        let tag = match self.layout {
            Layout::Card => "span",
            Layout::Table | Layout::Definition => "p",
        };
        format!("//{tag}[@class='{}-decoy']", self.prefix)
    }

    fn hint_class(&self, attribute: &str) -> String {
        format!("{}-hint-{attribute}", self.prefix)
    }
}

const DOMAINS: &[(&str, [(&str, Kind); 2])] = &[
    ("book", [("title", Kind::Title), ("author", Kind::Person)]),
    (
        "movie",
        [("title", Kind::Title), ("director", Kind::Person)],
    ),
    ("nbaplayer", [("name", Kind::Person), ("team", Kind::Team)]),
    (
        "restaurant",
        [("name", Kind::Title), ("phone", Kind::Phone)],
    ),
    (
        "university",
        [("name", Kind::Title), ("phone", Kind::Phone)],
    ),
];

const SITE_NAMES: &[&str] = &[
    "harbor", "lantern", "meridian", "quartz", "willow", "summit", "cobalt", "juniper", "atlas",
    "ember", "falcon", "granite",
];

const ADJ: &[&str] = &[
    "Silent",
    "Golden",
    "Hidden",
    "Broken",
    "Crimson",
    "Distant",
    "Frozen",
    "Gentle",
    "Hollow",
    "Iron",
    "Lonely",
    "Quiet",
    "Restless",
    "Scarlet",
    "Wandering",
];
const NOUN: &[&str] = &[
    "Harbor", "Garden", "River", "Empire", "Lantern", "Orchard", "Valley", "Tower", "Meadow",
    "Compass", "Station", "Kingdom", "Bridge", "Forest", "Shore",
];
const FIRST: &[&str] = &[
    "Maria", "James", "Aisha", "Chen", "Lukas", "Priya", "Omar", "Elena", "Noah", "Sofia", "Kenji",
    "Grace", "Mateo", "Ines", "Tomas",
];
const LAST: &[&str] = &[
    "Lopez",
    "Ward",
    "Okafor",
    "Lindqvist",
    "Moreau",
    "Tanaka",
    "Novak",
    "Reyes",
    "Fischer",
    "Haddad",
    "Kowalski",
    "Brennan",
    "Sato",
    "Duarte",
    "Quinn",
];
const CITY: &[&str] = &[
    "Denver", "Portland", "Austin", "Memphis", "Boston", "Orlando", "Phoenix", "Detroit",
];
const MASCOT: &[&str] = &[
    "Comets", "Rangers", "Falcons", "Pioneers", "Tides", "Wolves", "Hornets", "Royals",
];
const NOISE: &[&str] = &[
    "Free shipping on selected items.",
    "Sign up for our newsletter.",
    "Customers also viewed these listings.",
    "Updated daily by our editors.",
    "Read the community guidelines.",
    "Share this page with friends.",
];

fn site_specs(n: usize) -> Vec<SiteSpec> {
    (0..n)
        .map(|i| {
            let (domain, attrs) = DOMAINS[i % DOMAINS.len()];
            let name = SITE_NAMES[i % SITE_NAMES.len()];
            let website = if i < SITE_NAMES.len() {
                name.to_string()
            } else {
                format!("{name}{i}")
            };
            let prefix = format!("s{i}");
            let layout = [Layout::Card, Layout::Table, Layout::Definition][i % 3];
            let attr = |j: usize| {
                let (attribute, kind) = attrs[j];
                let tag = match (layout, j) {
                    (Layout::Card, 0) => "h2",
                    (Layout::Card, _) => "li",
                    (Layout::Table, _) => "td",
                    (Layout::Definition, _) => "dd",
                };
                AttrSpec {
                    attribute,
                    kind,
                    tag,
                    class: format!("{prefix}-{attribute}"),
                    multi: layout == Layout::Card && j == 1 && kind == Kind::Person,
                }
            };
            SiteSpec {
                domain,
                website,
                layout,
                attrs: [attr(0), attr(1)],
                chatty: i % 4 == 1,
                prefix,
            }
        })
        .collect()
}

fn value(kind: Kind, rng: &mut ChaCha8Rng) -> String {
    let pick = |list: &[&'static str], rng: &mut ChaCha8Rng| *list.choose(rng).expect("non-empty");
    match kind {
        Kind::Title => format!("The {} {}", pick(ADJ, rng), pick(NOUN, rng)),
        Kind::Person => format!("{} {}", pick(FIRST, rng), pick(LAST, rng)),
        Kind::Team => format!("{} {}", pick(CITY, rng), pick(MASCOT, rng)),
        Kind::Phone => format!(
            "({}) 555-{:04}",
            rng.random_range(201..990),
            rng.random_range(100..10_000)
        ),
    }
}

struct PageData {
    id: String,
    values: [Vec<String>; 2],
    hints: Vec<String>,
}

fn render_values(site: &SiteSpec, j: usize, values: &[String]) -> String {
    let a = &site.attrs[j];
    values
        .iter()
        .map(|v| format!("<{0} class=\"{1}\">{v}</{0}>", a.tag, a.class))
        .collect()
}

fn render_page(site: &SiteSpec, page: &PageData, rng: &mut ChaCha8Rng) -> String {
    let p = &site.prefix;
    let labels = [site.attrs[0].attribute, site.attrs[1].attribute];
    let record = match site.layout {
        Layout::Card => format!(
            "<div class=\"{p}-card\">\n  <div class=\"{p}-badge\"><span class=\"{p}-decoy\">Editor's pick</span></div>\n  {}\n  <ul class=\"{p}-list\">{}</ul>\n</div>",
            render_values(site, 0, &page.values[0]),
            render_values(site, 1, &page.values[1]),
        ),
        Layout::Table => {
            let rows: String = (0..2)
                .map(|j| {
                    format!(
                        "<tr><th>{}</th>{}</tr>",
                        labels[j],
                        render_values(site, j, &page.values[j])
                    )
                })
                .collect();
            format!(
                "<div class=\"{p}-facts\">\n  <p class=\"{p}-decoy\">Quick facts</p>\n  <table>{rows}</table>\n</div>"
            )
        }
        Layout::Definition => {
            let items: String = (0..2)
                .map(|j| {
                    format!(
                        "<dt>{}</dt>{}",
                        labels[j],
                        render_values(site, j, &page.values[j])
                    )
                })
                .collect();
            format!(
                "<section class=\"{p}-details\">\n  <dl>{items}</dl>\n  <p class=\"{p}-decoy\">Details</p>\n</section>"
            )
        }
    };
    let hints: String = page
        .hints
        .iter()
        .map(|h| format!("<div class=\"{h}\">Sponsored listing</div>\n"))
        .collect();
    let noise: String = (0..rng.random_range(1..4))
        .map(|_| format!("<p>{}</p>", NOISE.choose(rng).expect("non-empty")))
        .collect();
    format!(
        "<!DOCTYPE html>\n<html>\n<head><title>{title} | {site}</title>\n<script>var page = {id};</script>\n<style>.{p}-card {{ margin: 0 }}</style></head>\n<body>\n<div class=\"{p}-nav\"><a href=\"/\">Home</a> <a href=\"/browse\">Browse</a></div>\n<!-- record -->\n{hints}<div class=\"{p}-main\">\n{record}\n<div class=\"{p}-side\">{noise}</div>\n</div>\n<div class=\"{p}-foot\">&copy; {site} &amp; partners</div>\n</body>\n</html>\n",
        title = page.values[0].first().map_or("", String::as_str),
        site = site.website,
        id = page.id,
    )
}

/// Plays the model for the fixture corpus. Knows every site's template and
/// answers by inspecting the html it is shown.
pub struct FixtureResponder {
    sites: Vec<(SiteSpec, [String; 2])>,
}

impl FixtureResponder {
    fn new(sites: &[SiteSpec], table: &InstructionTable) -> Result<Self, DataError> {
        let sites = sites
            .iter()
            .map(|s| {
                let ins = |j: usize| table.instruction(s.domain, s.attrs[j].attribute);
                Ok((s.clone(), [ins(0)?, ins(1)?]))
            })
            .collect::<Result<_, DataError>>()?;
        Ok(FixtureResponder { sites })
    }

    fn crawl(&self, instruction: &str, html: &str, attempt: u32, reflect: bool) -> String {
        let Ok(tree) = parse_html(html, "shown") else {
            return absent("The page could not be read.");
        };
        let found = self.sites.iter().find_map(|(site, ins)| {
            (0..2).find_map(|j| {
                if ins[j] != instruction {
                    return None;
                }
                let r = eval_text(&tree, &site.attrs[j].xpath());
                (r.status == ExtractionStatus::Ok && !r.values.is_empty())
                    .then(|| (site, &site.attrs[j], r.values))
            })
        });
        let Some((site, attr, values)) = found else {
            return absent("The requested value does not appear on the page.");
        };
        let full = html.trim_start().starts_with("<html");
        if full && !reflect {
            let hint = format!("//*[@class='{}']", site.hint_class(attr.attribute));
            if !eval_text(&tree, &hint).values.is_empty() {
                let v = values[0].clone();
                return json!({
                    "thought": "The value is written right in the text, so match on it.",
                    "value": [v],
                    "xpath": format!("//{}[contains(text(),'{v}')]", attr.tag),
                })
                .to_string();
            }
            if site.chatty && attempt == 0 {
                return "Sure. Looking at the page, the value is in the main card.".into();
            }
            return json!({
                "thought": "The value sits next to this label in the main record.",
                "value": values,
                "xpath": site.decoy_xpath(),
            })
            .to_string();
        }
        json!({
            "thought": "The record holds the value in a dedicated element.",
            "consistent": if reflect { "yes" } else { "no" },
            "value": values,
            "xpath": attr.xpath(),
        })
        .to_string()
    }
}

fn absent(thought: &str) -> String {
    json!({"thought": thought, "value": [], "xpath": ""}).to_string()
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn list_slot(s: &str) -> Result<Vec<String>, LlmError> {
    serde_json::from_str(s).map_err(|e| LlmError::Config(format!("value list slot: {e}")))
}

impl Backend for FixtureResponder {
    fn respond(&self, req: &BackendRequest<'_>) -> Result<String, LlmError> {
        match req.template {
            TemplateName::Crawler => {
                Ok(self.crawl(&req.slots[0], &req.slots[1], req.attempt, false))
            }
            TemplateName::Reflexion => {
                Ok(self.crawl(&req.slots[0], &req.slots[1], req.attempt, true))
            }
            TemplateName::Judgement => {
                let same =
                    values_consistent(&list_slot(&req.slots[0])?, &list_slot(&req.slots[1])?);
                Ok(
                    json!({"thought": "Compared both lists.", "judgement": yes_no(same)})
                        .to_string(),
                )
            }
            TemplateName::Stepback => {
                let values = list_slot(&req.slots[1])?;
                let tree = parse_html(&req.slots[2], "shown")
                    .map_err(|e| LlmError::Config(e.to_string()))?;
                let yes = tree_contains(&tree, &values);
                Ok(
                    json!({"thought": "Checked the fragment.", "judgement": yes_no(yes)})
                        .to_string(),
                )
            }
            TemplateName::Synthesis => Err(LlmError::Config(
                "the fixture responder does not answer synthesis prompts".into(),
            )),
        }
    }
}

/// What [`write_fixture`] produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureSummary {
    pub manifest: PathBuf,
    pub backend: PathBuf,
    pub script: PathBuf,
    pub websites: usize,
    pub pages: usize,
    pub cases: usize,
    /// Case id to outlier page id.
    pub outliers: BTreeMap<String, String>,
    pub script_entries: usize,
}

fn write(path: &Path, text: &str) -> Result<(), DataError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn page_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{i:04}")).collect()
}

/// Writes `dir/corpus/`, `dir/manifest.json`, the recorded `dir/script.json`
/// and a scripted `dir/backend.json` pointing at it.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> Result<FixtureSummary, DataError> {
    let sites = site_specs(spec.websites);
    let table = InstructionTable::default();
    let ids = page_ids(spec.pages);
    let corpus = dir.join("corpus");
    let mut outliers = BTreeMap::new();
    let mut websites = Vec::new();
    let mut attributes: BTreeMap<String, Vec<String>> = BTreeMap::new();

    for site in &sites {
        attributes
            .entry(site.domain.to_string())
            .or_insert_with(|| site.attrs.iter().map(|a| a.attribute.to_string()).collect());
        let mut hints: BTreeMap<String, Vec<String>> = BTreeMap::new();
        if spec.outliers && spec.pages > 1 {
            for a in &site.attrs {
                let case_id = format!("{}-{}-{}", site.domain, site.website, a.attribute);
                let page = select_seeds(&ids, 1, case_seed(spec.seed, &case_id))
                    .expect("at least one page")
                    .remove(0);
                hints
                    .entry(page.clone())
                    .or_default()
                    .push(site.hint_class(a.attribute));
                outliers.insert(case_id, page);
            }
        }
        let mut gold = String::new();
        let mut pages = Vec::new();
        for id in &ids {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                spec.seed,
                &format!("fixture/{}/{id}", site.website),
            ));
            let values = [0, 1].map(|j| {
                let a = &site.attrs[j];
                let n = if a.multi { rng.random_range(1..=2) } else { 1 };
                let mut vs: Vec<String> = Vec::new();
                while vs.len() < n {
                    let v = value(a.kind, &mut rng);
                    if !vs.contains(&v) {
                        vs.push(v);
                    }
                }
                vs
            });
            let data = PageData {
                id: id.clone(),
                values,
                hints: hints.remove(id).unwrap_or_default(),
            };
            let html = render_page(site, &data, &mut rng);
            let rel = PathBuf::from(&site.website).join(format!("{id}.html"));
            write(&corpus.join(&rel), &html)?;
            pages.push(PageEntry {
                id: id.clone(),
                path: rel,
                checksum: Some(checksum(html.as_bytes())),
            });
            for (a, vs) in site.attrs.iter().zip(&data.values) {
                let rec = GoldRecord {
                    page: id.clone(),
                    attribute: a.attribute.to_string(),
                    values: vs.clone(),
                };
                gold.push_str(&serde_json::to_string(&rec).expect("gold serializes"));
                gold.push('\n');
            }
        }
        let gold_rel = PathBuf::from(&site.website).join("gold.jsonl");
        write(&corpus.join(&gold_rel), &gold)?;
        websites.push(WebsiteEntry {
            domain: site.domain.to_string(),
            website: site.website.clone(),
            pages,
            gold: GoldSource::Jsonl { path: gold_rel },
        });
    }

    let manifest = CorpusManifest {
        root: PathBuf::from("corpus"),
        attributes,
        websites,
        instructions: None,
        relation_map: None,
    };
    let manifest_path = dir.join("manifest.json");
    manifest.save(&manifest_path)?;

    let loaded = CorpusManifest::load(&manifest_path)?;
    let cases = build_cases(&loaded, spec.pages, spec.seed)?;
    let recorder = Arc::new(RecordingBackend::new(FixtureResponder::new(
        &sites, &table,
    )?));
    let gateway = Gateway::new(recorder.clone(), Arc::new(LogicalClock::default()));
    let configs = [Strategy::Autocrawler, Strategy::Cot, Strategy::Reflexion]
        .into_iter()
        .flat_map(|s| {
            [JudgeMode::Deterministic, JudgeMode::Llm].map(|judge| StrategyConfig {
                judge,
                ..StrategyConfig::new(s)
            })
        });
    for cfg in configs {
        for case in &cases {
            for page in &case.pages {
                let tree = case.load_page(page)?;
                // Failures are part of the recorded behaviour.
                let _ = generate(&tree, &case.instruction, &gateway, &cfg);
            }
        }
    }
    let script = recorder.table();
    let script_path = dir.join("script.json");
    write(&script_path, &script.to_json())?;
    let backend_path = dir.join("backend.json");
    let backend = BackendConfig::scripted("script.json");
    write(
        &backend_path,
        &(serde_json::to_string_pretty(&backend).expect("config serializes") + "\n"),
    )?;

    Ok(FixtureSummary {
        manifest: manifest_path,
        backend: backend_path,
        script: script_path,
        websites: sites.len(),
        pages: spec.pages,
        cases: cases.len(),
        outliers,
        script_entries: script.len(),
    })
}

/// Scripted gateway over a fixture's recorded table.
pub fn fixture_gateway(summary: &FixtureSummary) -> Result<Gateway, LlmError> {
    Ok(Gateway::scripted(ScriptTable::load(&summary.script)?))
}
