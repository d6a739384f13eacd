mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use wrapsmith_core::analysis::CostModelParams;
use wrapsmith_core::evaluation::{report_table, Label};
use wrapsmith_core::exec::{FragilityRule, Strategy};
use wrapsmith_core::fixture::{write_fixture, FixtureSpec};
use wrapsmith_core::llm::{BackendConfig, Gateway, JudgeMode, LlmError};
use wrapsmith_core::pipeline::{self, GenerateSettings, PipelineError};

use settings::{Env, FileSettings, Layers, ProcessEnv};

#[derive(Debug, Parser)]
#[command(
    name = "wrapsmith",
    version,
    about = "Generate and evaluate XPath wrappers for templated websites"
)]
struct Cli {
    /// JSON settings file; flags override it and it overrides WRAPSMITH_* variables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build case files from a corpus manifest.
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
        /// Pages sampled per website.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate one candidate sequence per seed page of every case.
    Generate {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Backend configuration file.
        #[arg(long)]
        backend: Option<PathBuf>,
        #[arg(long)]
        dmax: Option<usize>,
        #[arg(long)]
        seeds_per_case: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// How proposed values are checked against extractions.
        #[arg(long)]
        judge: Option<JudgeMode>,
        /// Require exact value lists when judging.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        jobs: Option<usize>,
        /// Regenerate cases that already have output.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose one sequence per case among its candidates.
    Synthesize {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        mode: Option<JudgeMode>,
        /// Backend configuration, needed for `--mode llm`.
        #[arg(long)]
        backend: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute the chosen sequences on every page.
    Run {
        #[arg(long)]
        sequences: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score extraction results and write the report table.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        method: Option<String>,
    },
    /// Write compression, length, fragility and break-even tables.
    Analyze {
        /// Output directory of `generate`.
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        sequences: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value_t = 3)]
        n_s: u32,
        #[arg(long)]
        dmax: Option<usize>,
        /// Time of one direct extraction.
        #[arg(long, default_value_t = 1.0)]
        t_d: f64,
        /// Generation time; defaults to dmax * t_d.
        #[arg(long)]
        t_g: Option<f64>,
        /// Synthesis time; defaults to t_d.
        #[arg(long)]
        t_s: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        t_e: f64,
        #[arg(long, default_value_t = 4)]
        min_digit_run: usize,
        #[arg(long, default_value_t = 20)]
        max_literal_chars: usize,
    },
    /// Re-execute a recorded trace without contacting a model.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Write the synthetic corpus, its manifest and a recorded script.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        websites: usize,
        #[arg(long, default_value_t = 20)]
        pages: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_outliers: bool,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            kind: "usage",
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<LlmError> for Failure {
    fn from(e: LlmError) -> Self {
        Failure {
            code: 2,
            kind: "backend",
            message: e.to_string(),
        }
    }
}

fn str_of<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn gateway(path: &Path) -> Result<Gateway, Failure> {
    let cfg = BackendConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(Gateway::from_config(&cfg, base)?)
}

fn execute(cli: Cli, env: &dyn Env) -> Result<Vec<String>, Failure> {
    let file = match &cli.config {
        Some(p) => FileSettings::load(p).map_err(Failure::usage)?,
        None => FileSettings::default(),
    };
    let l = Layers { file, env };
    let seed = |flag: Option<u64>| l.pick(flag, |f| str_of(&f.seed), "SEED", Some(0));
    let jobs = |flag: Option<usize>| l.pick(flag, |f| str_of(&f.jobs), "JOBS", Some(1));
    let model =
        |flag: Option<String>| l.pick(flag, |f| f.model.clone(), "MODEL", Some("model".into()));

    match cli.command {
        Command::Prepare {
            manifest,
            sample,
            seed: s,
            out,
        } => {
            let sample = l
                .pick(sample, |f| str_of(&f.sample), "SAMPLE", Some(100))
                .map_err(Failure::usage)?;
            let ids = pipeline::prepare(&manifest, sample, seed(s).map_err(Failure::usage)?, &out)?;
            Ok(vec![format!(
                "prepared {} cases in {}",
                ids.len(),
                out.display()
            )])
        }
        Command::Generate {
            cases,
            strategy,
            backend,
            dmax,
            seeds_per_case,
            seed: s,
            judge,
            strict,
            jobs: j,
            force,
            out,
        } => {
            let settings = GenerateSettings {
                strategy: l
                    .pick(
                        strategy,
                        |f| f.strategy.clone(),
                        "STRATEGY",
                        Some(Strategy::Autocrawler),
                    )
                    .map_err(Failure::usage)?,
                d_max: l
                    .pick(dmax, |f| str_of(&f.dmax), "DMAX", Some(5))
                    .map_err(Failure::usage)?,
                judge: l
                    .pick(
                        judge,
                        |f| f.judge.clone(),
                        "JUDGE",
                        Some(JudgeMode::Deterministic),
                    )
                    .map_err(Failure::usage)?,
                strict,
                seeds_per_case: l
                    .pick(
                        seeds_per_case,
                        |f| str_of(&f.seeds_per_case),
                        "SEEDS_PER_CASE",
                        Some(3),
                    )
                    .map_err(Failure::usage)?,
                seed: seed(s).map_err(Failure::usage)?,
            };
            if settings.d_max == 0 || settings.seeds_per_case == 0 {
                return Err(Failure::usage("dmax and seeds-per-case must be positive"));
            }
            let backend: PathBuf = l
                .pick(
                    backend,
                    |f| str_of(&f.backend.as_ref().map(|p| p.display())),
                    "BACKEND",
                    None,
                )
                .map_err(Failure::usage)?;
            let gw = gateway(&backend)?;
            let jobs = jobs(j).map_err(Failure::usage)?;
            let summary = pipeline::generate_dir(&cases, &out, &gw, &settings, jobs, force)?;
            Ok(vec![format!(
                "generated {} cases, skipped {} up to date",
                summary.generated.len(),
                summary.skipped.len()
            )])
        }
        Command::Synthesize {
            candidates,
            mode,
            backend,
            out,
        } => {
            let mode = l
                .pick(
                    mode,
                    |f| f.mode.clone(),
                    "MODE",
                    Some(JudgeMode::Deterministic),
                )
                .map_err(Failure::usage)?;
            let backend: Option<PathBuf> = match mode {
                JudgeMode::Llm => Some(
                    l.pick(
                        backend,
                        |f| str_of(&f.backend.as_ref().map(|p| p.display())),
                        "BACKEND",
                        None,
                    )
                    .map_err(Failure::usage)?,
                ),
                JudgeMode::Deterministic => None,
            };
            let gw = backend.as_deref().map(gateway).transpose()?;
            let n = pipeline::synthesize_dir(&candidates, &out, gw.as_ref(), mode)?;
            Ok(vec![format!("chose sequences for {n} cases")])
        }
        Command::Run {
            sequences,
            cases,
            jobs: j,
            out,
        } => {
            let n = pipeline::run_dir(&sequences, &cases, &out, jobs(j).map_err(Failure::usage)?)?;
            Ok(vec![format!("executed sequences for {n} cases")])
        }
        Command::Eval {
            results,
            cases,
            out,
            model: m,
            method,
        } => {
            let model = model(m).map_err(Failure::usage)?;
            let method = l
                .pick(
                    method,
                    |f| f.strategy.clone(),
                    "STRATEGY",
                    Some("autocrawler".into()),
                )
                .map_err(Failure::usage)?;
            let (report, _) = pipeline::eval_dir(&results, &cases, &out, &model, &method)?;
            let table = report_table(&[(model, method, report.clone())]);
            let mut lines: Vec<String> = table.lines().map(str::to_string).collect();
            lines.push(format!(
                "Correct ratio: {:.4} over {} cases",
                report.ratio(Label::Correct),
                report.total
            ));
            Ok(lines)
        }
        Command::Analyze {
            traces,
            sequences,
            out,
            model: m,
            n_s,
            dmax,
            t_d,
            t_g,
            t_s,
            t_e,
            min_digit_run,
            max_literal_chars,
        } => {
            let d_max = l
                .pick(dmax, |f| str_of(&f.dmax), "DMAX", Some(5))
                .map_err(Failure::usage)?;
            let mut cost = CostModelParams::approximate(n_s, d_max as u32, t_d);
            cost.t_g = t_g.unwrap_or(cost.t_g);
            cost.t_s = t_s.unwrap_or(cost.t_s);
            cost.t_e = t_e;
            let rule = FragilityRule {
                min_digit_run,
                max_literal_chars,
            };
            let label = model(m).map_err(Failure::usage)?;
            let a = pipeline::analyze_dir(&traces, &sequences, &out, &label, &cost, &rule)?;
            Ok(vec![format!(
                "analyzed {} traces and {} sequences; mean length {}; break-even pages {}",
                a.traces,
                a.sequences,
                a.mean_length.map_or("-".into(), |m| format!("{m:.2}")),
                a.breakeven.map_or("none".into(), |n| n.to_string())
            )])
        }
        Command::Replay { trace } => {
            let n = pipeline::replay_file(&trace)?;
            Ok(vec![format!("replayed {n} recorded steps, all match")])
        }
        Command::Fixture {
            out,
            websites,
            pages,
            seed: s,
            no_outliers,
        } => {
            let spec = FixtureSpec {
                websites,
                pages,
                seed: seed(s).map_err(Failure::usage)?,
                outliers: !no_outliers,
            };
            let summary = write_fixture(&out, &spec).map_err(PipelineError::from)?;
            Ok(vec![
                format!(
                    "wrote {} websites x {} pages ({} cases, {} scripted replies)",
                    summary.websites, summary.pages, summary.cases, summary.script_entries
                ),
                format!("manifest: {}", summary.manifest.display()),
                format!("backend: {}", summary.backend.display()),
            ])
        }
    }
}

fn fail(f: &Failure) -> ExitCode {
    let record = json!({"error": {"kind": f.kind, "exit_code": f.code, "message": f.message}});
    eprintln!("{record}");
    ExitCode::from(f.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&Failure::usage(e.to_string().trim_end())),
    };
    match execute(cli, &ProcessEnv) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => fail(&f),
    }
}
