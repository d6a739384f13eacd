//! Batch stages over directories of structured files.
//!
//! Each stage reads the previous stage's directory and writes one JSON file
//! per case, named after the case id. Files are written atomically, so a
//! file that exists is complete.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    breakeven_table, compression_table, final_ratio, fragility_report, fragility_table,
    length_table, AnalysisError, CostModelParams, LengthHistogram,
};
use crate::dataset::{
    build_cases, io_err, load_case, load_page_file, read_text, save_case, CorpusManifest,
    DataError, WebpageCase,
};
use crate::evaluation::{
    aggregate, classify_case, report_table, CaseOutcome, PageValues, SuiteReport,
};
use crate::exec::{run_sequence, ActionSequence, ExtractionResult, FragilityRule, Strategy};
use crate::generation::{
    generate, replay_trace, GenerationError, GenerationTrace, Outcome, ReplayMismatch,
    StrategyConfig,
};
use crate::llm::{Gateway, JudgeMode, LlmError};
use crate::synthesis::{
    case_seed, cross_execute, select_seeds, synthesize, Choice, SynthesisError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("case {case}: {error}")]
    Backend { case: String, error: LlmError },
    #[error("case {case}: {source}")]
    Synthesis {
        case: String,
        source: SynthesisError,
    },
    #[error("{path}: {source}")]
    Replay {
        path: String,
        source: ReplayMismatch,
    },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{0}")]
    Usage(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Backend { .. } => 2,
            PipelineError::Synthesis {
                source: SynthesisError::Backend(_),
                ..
            } => 2,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "usage",
            2 => "backend",
            _ => "data",
        }
    }
}

impl From<LlmError> for PipelineError {
    fn from(error: LlmError) -> Self {
        PipelineError::Backend {
            case: String::new(),
            error,
        }
    }
}

fn schema(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    DataError::SchemaViolation(format!("{}: {e}", path.display())).into()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| schema(path, e))
}

/// Pretty JSON with a trailing newline, written through a temporary file.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes") + "\n";
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// `*.json` files directly under `dir`, sorted by name.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}

fn case_file(dir: &Path, case_id: &str) -> PathBuf {
    dir.join(format!("{case_id}.json"))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Usage(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateSettings {
    pub strategy: Strategy,
    pub d_max: usize,
    pub judge: JudgeMode,
    pub strict: bool,
    pub seeds_per_case: usize,
    pub seed: u64,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        GenerateSettings {
            strategy: Strategy::Autocrawler,
            d_max: 5,
            judge: JudgeMode::Deterministic,
            strict: false,
            seeds_per_case: crate::synthesis::DEFAULT_SEEDS,
            seed: 0,
        }
    }
}

impl GenerateSettings {
    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            strategy: self.strategy,
            d_max: self.d_max,
            judge: self.judge,
            strict: self.strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub page: String,
    pub html_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<ActionSequence>,
    /// Values the generator settled on for this page; `None` when
    /// generation failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub case_id: String,
    pub instruction: String,
    pub settings: GenerateSettings,
    pub seeds: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub case_id: String,
    pub page: String,
    pub html_path: PathBuf,
    pub trace: GenerationTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenSequence {
    pub case_id: String,
    pub mode: JudgeMode,
    pub seeds: Vec<String>,
    /// `None` when no seed produced a candidate.
    pub choice: Option<Choice>,
}

impl ChosenSequence {
    pub fn sequence(&self) -> Option<&ActionSequence> {
        self.choice.as_ref().map(|c| &c.sequence)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageResult {
    pub page: String,
    pub result: ExtractionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResults {
    pub case_id: String,
    pub pages: Vec<PageResult>,
}

fn expected_of(trace: &GenerationTrace) -> Option<Vec<String>> {
    match &trace.outcome {
        Outcome::Success { .. } => trace.steps.last().map(|s| s.proposed_value.clone()),
        Outcome::Absent { .. } => Some(Vec::new()),
        Outcome::Failed { .. } => None,
    }
}

/// Generates one candidate per seed page. A backend error aborts the case.
pub fn generate_case(
    case: &WebpageCase,
    gateway: &Gateway,
    settings: &GenerateSettings,
) -> Result<(CandidateSet, Vec<TraceRecord>), PipelineError> {
    let case_id = case.id();
    let seeds = select_seeds(
        &case.page_ids(),
        settings.seeds_per_case,
        case_seed(settings.seed, &case_id),
    )
    .map_err(|source| PipelineError::Synthesis {
        case: case_id.clone(),
        source,
    })?;
    let cfg = settings.strategy_config();
    let mut runs = Vec::new();
    let mut traces = Vec::new();
    for id in seeds {
        let page = case.page(&id).expect("seed drawn from the case");
        let tree = case.load_page(page)?;
        let (sequence, trace) = match generate(&tree, &case.instruction, gateway, &cfg) {
            Ok((seq, trace)) => (Some(seq), trace),
            Err(GenerationError::Failed { trace, .. }) => (None, *trace),
            Err(GenerationError::Backend { error, .. }) => {
                return Err(PipelineError::Backend {
                    case: case_id,
                    error,
                })
            }
        };
        runs.push(SeedRun {
            page: id.clone(),
            html_path: case.html_path(page),
            expected: expected_of(&trace),
            sequence,
        });
        traces.push(TraceRecord {
            case_id: case_id.clone(),
            page: id,
            html_path: case.html_path(page),
            trace,
        });
    }
    let set = CandidateSet {
        case_id,
        instruction: case.instruction.clone(),
        settings: *settings,
        seeds: runs,
    };
    Ok((set, traces))
}

/// Picks one candidate for the case. `gateway` is only needed in LLM mode.
pub fn synthesize_case(
    set: &CandidateSet,
    gateway: Option<&Gateway>,
    mode: JudgeMode,
) -> Result<ChosenSequence, PipelineError> {
    let chosen = |choice| ChosenSequence {
        case_id: set.case_id.clone(),
        mode,
        seeds: set.seeds.iter().map(|s| s.page.clone()).collect(),
        choice,
    };
    let candidates: Vec<ActionSequence> = set
        .seeds
        .iter()
        .filter_map(|s| s.sequence.clone())
        .collect();
    if candidates.is_empty() {
        return Ok(chosen(None));
    }
    let scripted;
    let gateway = match (gateway, mode) {
        (Some(g), _) => g,
        (None, JudgeMode::Deterministic) => {
            scripted = Gateway::scripted(Default::default());
            &scripted
        }
        (None, JudgeMode::Llm) => {
            return Err(PipelineError::Usage(
                "llm synthesis needs a backend configuration".into(),
            ))
        }
    };
    let trees = set
        .seeds
        .iter()
        .map(|s| load_page_file(&s.html_path, &s.page))
        .collect::<Result<Vec<_>, _>>()?;
    let expected: Vec<Option<Vec<String>>> = set.seeds.iter().map(|s| s.expected.clone()).collect();
    let matrix = cross_execute(&candidates, &trees);
    let choice = synthesize(
        &candidates,
        &matrix,
        &expected,
        gateway,
        mode,
        &set.instruction,
    )
    .map_err(|source| PipelineError::Synthesis {
        case: set.case_id.clone(),
        source,
    })?;
    Ok(chosen(Some(choice)))
}

/// Runs `sequence` on every page of the case; without a sequence nothing
/// is extracted.
pub fn run_case(
    case: &WebpageCase,
    sequence: Option<&ActionSequence>,
) -> Result<CaseResults, PipelineError> {
    let pages = case
        .pages
        .iter()
        .map(|p| {
            let result = match sequence {
                Some(seq) => run_sequence(&case.load_page(p)?, seq),
                None => ExtractionResult::no_match(),
            };
            Ok(PageResult {
                page: p.id.clone(),
                result,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(CaseResults {
        case_id: case.id(),
        pages,
    })
}

pub fn evaluate_case(
    case: &WebpageCase,
    results: &CaseResults,
) -> Result<CaseOutcome, PipelineError> {
    let by_page: BTreeMap<&str, &ExtractionResult> = results
        .pages
        .iter()
        .map(|p| (p.page.as_str(), &p.result))
        .collect();
    let pages = case
        .pages
        .iter()
        .map(|p| {
            let r = by_page.get(p.id.as_str()).ok_or_else(|| {
                DataError::SchemaViolation(format!(
                    "case {}: no result for page {}",
                    case.id(),
                    p.id
                ))
            })?;
            Ok(PageValues {
                page_id: p.id.clone(),
                extracted: r.values.clone(),
                gold: p.gold.clone(),
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    classify_case(&case.id(), &pages)
        .map_err(|e| DataError::SchemaViolation(format!("case {}: {e}", case.id())).into())
}

pub fn prepare(
    manifest: &Path,
    sample: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<String>, PipelineError> {
    let m = CorpusManifest::load(manifest)?;
    let cases = build_cases(&m, sample, seed)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    for c in &cases {
        save_case(c, &case_file(out, &c.id()))?;
    }
    Ok(cases.iter().map(WebpageCase::id).collect())
}

pub fn load_cases(dir: &Path) -> Result<Vec<WebpageCase>, PipelineError> {
    json_files(dir)?
        .iter()
        .map(|p| load_case(p).map_err(Into::into))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerateSummary {
    pub generated: Vec<String>,
    pub skipped: Vec<String>,
}

fn checkpoint_valid(path: &Path, case_id: &str, settings: &GenerateSettings) -> bool {
    read_json::<CandidateSet>(path).is_ok_and(|s| s.case_id == case_id && s.settings == *settings)
}

fn trace_path(out: &Path, case_id: &str, page: &str) -> PathBuf {
    out.join("traces")
        .join(case_id)
        .join(format!("{page}.json"))
}

/// Generates candidates for every case under `cases_dir` into `out`, with
/// traces under `out/traces/<case>/<page>.json`. Cases whose candidate file
/// already matches the settings are skipped unless `force`. Failing cases
/// leave no files; the first failure in case order is returned after all
/// cases ran.
pub fn generate_dir(
    cases_dir: &Path,
    out: &Path,
    gateway: &Gateway,
    settings: &GenerateSettings,
    jobs: usize,
    force: bool,
) -> Result<GenerateSummary, PipelineError> {
    let cases = load_cases(cases_dir)?;
    let outcomes: Vec<Result<bool, PipelineError>> = pool(jobs)?.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let id = case.id();
                let path = case_file(out, &id);
                if !force && checkpoint_valid(&path, &id, settings) {
                    return Ok(false);
                }
                let (set, traces) = generate_case(case, gateway, settings)?;
                for t in &traces {
                    write_json(&trace_path(out, &id, &t.page), t)?;
                }
                write_json(&path, &set)?;
                Ok(true)
            })
            .collect()
    });
    let mut summary = GenerateSummary::default();
    for (case, outcome) in cases.iter().zip(outcomes) {
        if outcome? {
            summary.generated.push(case.id());
        } else {
            summary.skipped.push(case.id());
        }
    }
    Ok(summary)
}

pub fn synthesize_dir(
    candidates_dir: &Path,
    out: &Path,
    gateway: Option<&Gateway>,
    mode: JudgeMode,
) -> Result<usize, PipelineError> {
    let files = json_files(candidates_dir)?;
    let chosen = files
        .par_iter()
        .map(|p| synthesize_case(&read_json::<CandidateSet>(p)?, gateway, mode))
        .collect::<Result<Vec<_>, _>>()?;
    for c in &chosen {
        write_json(&case_file(out, &c.case_id), c)?;
    }
    Ok(chosen.len())
}

fn load_sequences(dir: &Path) -> Result<BTreeMap<String, ChosenSequence>, PipelineError> {
    json_files(dir)?
        .iter()
        .map(|p| read_json::<ChosenSequence>(p).map(|c| (c.case_id.clone(), c)))
        .collect()
}

/// Runs each case's chosen sequence on all of its pages.
pub fn run_dir(
    sequences_dir: &Path,
    cases_dir: &Path,
    out: &Path,
    jobs: usize,
) -> Result<usize, PipelineError> {
    let sequences = load_sequences(sequences_dir)?;
    let cases = load_cases(cases_dir)?;
    let results = pool(jobs)?.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let chosen = sequences.get(&case.id()).ok_or_else(|| {
                    DataError::MissingFile(
                        case_file(sequences_dir, &case.id()).display().to_string(),
                    )
                })?;
                run_case(case, chosen.sequence())
            })
            .collect::<Result<Vec<_>, PipelineError>>()
    })?;
    for r in &results {
        write_json(&case_file(out, &r.case_id), r)?;
    }
    Ok(results.len())
}

/// Scores every case and writes the one-row report table to `out`.
pub fn eval_dir(
    results_dir: &Path,
    cases_dir: &Path,
    out: &Path,
    model: &str,
    method: &str,
) -> Result<(SuiteReport, Vec<CaseOutcome>), PipelineError> {
    let cases = load_cases(cases_dir)?;
    let outcomes = cases
        .iter()
        .map(|case| {
            let results: CaseResults = read_json(&case_file(results_dir, &case.id()))?;
            evaluate_case(case, &results)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = aggregate(&outcomes)
        .map_err(|e| PipelineError::from(DataError::SchemaViolation(e.to_string())))?;
    let table = report_table(&[(model.to_string(), method.to_string(), report.clone())]);
    write_text(out, &table)?;
    Ok((report, outcomes))
}

pub fn load_traces(dir: &Path) -> Result<Vec<TraceRecord>, PipelineError> {
    let root = dir.join("traces");
    let mut out = Vec::new();
    if !root.is_dir() {
        return Err(DataError::MissingFile(root.display().to_string()).into());
    }
    let mut case_dirs: Vec<PathBuf> = fs::read_dir(&root)
        .map_err(|e| io_err(&root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    case_dirs.sort();
    for d in case_dirs {
        for f in json_files(&d)? {
            out.push(read_json(&f)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSummary {
    pub traces: usize,
    pub sequences: usize,
    pub mean_length: Option<f64>,
    pub breakeven: Option<u64>,
}

/// Writes `compression.tsv`, `lengths.tsv`, `fragility.tsv` and
/// `breakeven.tsv` under `out`.
pub fn analyze_dir(
    traces_dir: &Path,
    sequences_dir: &Path,
    out: &Path,
    label: &str,
    cost: &CostModelParams,
    rule: &FragilityRule,
) -> Result<AnalysisSummary, PipelineError> {
    let traces = load_traces(traces_dir)?;
    let sequences = load_sequences(sequences_dir)?;
    let mut compression = Vec::new();
    for t in &traces {
        if matches!(t.trace.outcome, Outcome::Success { .. }) {
            compression.push((format!("{}/{}", t.case_id, t.page), final_ratio(&t.trace)?));
        }
    }
    let d_max = traces.iter().map(|t| t.trace.d_max).max().unwrap_or(5);
    let hist = LengthHistogram::from_traces(traces.iter().map(|t| &t.trace));
    let chosen: Vec<&ActionSequence> = sequences.values().filter_map(|c| c.sequence()).collect();
    let fragility = fragility_report(chosen.iter().copied(), rule);
    write_text(
        &out.join("compression.tsv"),
        &compression_table(&compression),
    )?;
    write_text(
        &out.join("lengths.tsv"),
        &length_table(&[(label.to_string(), hist.clone())], d_max),
    )?;
    write_text(&out.join("fragility.tsv"), &fragility_table(&fragility))?;
    write_text(&out.join("breakeven.tsv"), &breakeven_table(cost))?;
    Ok(AnalysisSummary {
        traces: traces.len(),
        sequences: chosen.len(),
        mean_length: hist.mean(),
        breakeven: crate::analysis::breakeven_pages(cost).ok(),
    })
}

/// Re-executes a recorded trace against its page; returns the number of
/// checked steps.
pub fn replay_file(path: &Path) -> Result<usize, PipelineError> {
    let rec: TraceRecord = read_json(path)?;
    let page = load_page_file(&rec.html_path, &rec.page)?;
    replay_trace(&page, &rec.trace).map_err(|source| PipelineError::Replay {
        path: path.display().to_string(),
        source,
    })
}
