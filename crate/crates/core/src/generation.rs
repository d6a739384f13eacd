//! Wrapper generation for a single seed page.
//!
//! The autocrawler strategy alternates top-down proposals with step-back
//! pruning: each proposed xpath is checked against the value the model
//! claims it extracts, and on a mismatch the xpath is climbed with `/..`
//! until the selected subtree contains that value. The subtree becomes the
//! page for the next iteration and the climbing xpath becomes a pruning
//! step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::{measure, DocumentTree, TreeMetrics};
use crate::exec::{
    eval_node, eval_text, ActionSequence, ExtractionResult, ExtractionStatus, NodeSelectError,
    Provenance, Strategy,
};
use crate::llm::{
    fingerprint, values_consistent, values_equal_strict, Gateway, JudgeMode, LlmError, LlmExchange,
    PromptCall, TemplateName,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub d_max: usize,
    pub judge: JudgeMode,
    /// Compare extracted and proposed values with exact list equality.
    pub strict: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            strategy: Strategy::Autocrawler,
            d_max: 5,
            judge: JudgeMode::Deterministic,
            strict: false,
        }
    }
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        StrategyConfig {
            strategy,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Stepback { count: usize },
    Retry,
    GiveUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub metrics_before: TreeMetrics,
    pub exchanges: Vec<LlmExchange>,
    pub thought: String,
    pub proposed_xpath: String,
    pub proposed_value: Vec<String>,
    pub result: ExtractionResult,
    pub decision: Decision,
    /// Step-back xpath appended to the sequence, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruning_xpath: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_after: Option<TreeMetrics>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureReason {
    DmaxExhausted,
    MalformedOutput,
    Backend { message: String },
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailureReason::DmaxExhausted => f.write_str("d_max iterations exhausted"),
            FailureReason::MalformedOutput => f.write_str("malformed model output"),
            FailureReason::Backend { message } => write!(f, "backend error: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Success {
        sequence: ActionSequence,
    },
    /// The model left the xpath blank: the attribute is absent.
    Absent {
        sequence: ActionSequence,
    },
    Failed {
        reason: FailureReason,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub seed_page: String,
    pub instruction: String,
    pub strategy: Strategy,
    pub d_max: usize,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
}

impl GenerationTrace {
    fn new(page: &DocumentTree, instruction: &str, cfg: &StrategyConfig) -> Self {
        GenerationTrace {
            seed_page: page.source_id().to_string(),
            instruction: instruction.to_string(),
            strategy: cfg.strategy,
            d_max: cfg.d_max,
            steps: Vec::new(),
            outcome: Outcome::Failed {
                reason: FailureReason::DmaxExhausted,
            },
        }
    }

    pub fn sequence(&self) -> Option<&ActionSequence> {
        match &self.outcome {
            Outcome::Success { sequence } | Outcome::Absent { sequence } => Some(sequence),
            Outcome::Failed { .. } => None,
        }
    }

    pub fn iterations(&self) -> usize {
        self.steps.len()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error("generation failed: {reason}")]
    Failed {
        reason: FailureReason,
        trace: Box<GenerationTrace>,
    },
    #[error("{error}")]
    Backend {
        error: LlmError,
        trace: Box<GenerationTrace>,
    },
}

impl GenerationError {
    pub fn trace(&self) -> &GenerationTrace {
        match self {
            GenerationError::Failed { trace, .. } | GenerationError::Backend { trace, .. } => trace,
        }
    }
}

pub type Generated = (ActionSequence, GenerationTrace);

pub fn generate(
    page: &DocumentTree,
    instruction: &str,
    gateway: &Gateway,
    cfg: &StrategyConfig,
) -> Result<Generated, GenerationError> {
    match cfg.strategy {
        Strategy::Autocrawler => generate_autocrawler(page, instruction, gateway, cfg),
        Strategy::Cot => generate_cot(page, instruction, gateway, cfg),
        Strategy::Reflexion => generate_reflexion(page, instruction, gateway, cfg),
    }
}

/// Loop state shared by the strategies.
struct Run<'a> {
    gateway: &'a Gateway,
    cfg: &'a StrategyConfig,
    instruction: &'a str,
    trace: GenerationTrace,
    provenance: Provenance,
}

impl<'a> Run<'a> {
    fn new(
        page: &DocumentTree,
        instruction: &'a str,
        gateway: &'a Gateway,
        cfg: &'a StrategyConfig,
    ) -> Self {
        Run {
            gateway,
            cfg,
            instruction,
            trace: GenerationTrace::new(page, instruction, cfg),
            provenance: Provenance {
                seed_page: page.source_id().to_string(),
                strategy: cfg.strategy,
            },
        }
    }

    fn complete(&mut self, call: PromptCall) -> Result<LlmExchange, GenerationError> {
        self.gateway.complete(&call).map_err(|e| self.error(e))
    }

    fn error(&mut self, error: LlmError) -> GenerationError {
        let reason = match &error {
            LlmError::MalformedOutput(_) => FailureReason::MalformedOutput,
            other => FailureReason::Backend {
                message: other.to_string(),
            },
        };
        self.trace.outcome = Outcome::Failed {
            reason: reason.clone(),
        };
        let trace = Box::new(self.trace.clone());
        match error {
            LlmError::MalformedOutput(_) => GenerationError::Failed { reason, trace },
            error => GenerationError::Backend { error, trace },
        }
    }

    fn crawler(&mut self, tree: &DocumentTree) -> Result<LlmExchange, GenerationError> {
        let fp = fingerprint(
            TemplateName::Crawler,
            self.instruction,
            &tree.canonical_html(),
            "",
        );
        self.complete(PromptCall {
            template: TemplateName::Crawler,
            slots: vec![self.instruction.to_string(), tree.to_html()],
            fingerprint: fp,
        })
    }

    /// Judges whether an extraction matches the values the model proposed.
    fn consistent(
        &mut self,
        result: &ExtractionResult,
        proposed: &[String],
        exchanges: &mut Vec<LlmExchange>,
    ) -> Result<bool, GenerationError> {
        if result.status != ExtractionStatus::Ok || result.values.is_empty() {
            return Ok(false);
        }
        if self.cfg.strict {
            return Ok(values_equal_strict(&result.values, proposed));
        }
        let verdict = self
            .gateway
            .judge_consistent(self.cfg.judge, &result.values, proposed)
            .map_err(|e| self.error(e))?;
        exchanges.extend(verdict.exchange);
        Ok(verdict.yes)
    }

    fn contains(
        &mut self,
        tree: &DocumentTree,
        values: &[String],
        exchanges: &mut Vec<LlmExchange>,
    ) -> Result<bool, GenerationError> {
        let verdict = self
            .gateway
            .judge_contains(self.cfg.judge, tree, values, self.instruction)
            .map_err(|e| self.error(e))?;
        exchanges.extend(verdict.exchange);
        Ok(verdict.yes)
    }

    fn finish(mut self, steps: Vec<String>, absent: bool) -> Generated {
        let sequence = ActionSequence::new(steps, self.provenance.clone());
        self.trace.outcome = if absent {
            Outcome::Absent {
                sequence: sequence.clone(),
            }
        } else {
            Outcome::Success {
                sequence: sequence.clone(),
            }
        };
        (sequence, self.trace)
    }

    fn exhausted(mut self) -> GenerationError {
        let reason = FailureReason::DmaxExhausted;
        self.trace.outcome = Outcome::Failed {
            reason: reason.clone(),
        };
        GenerationError::Failed {
            reason,
            trace: Box::new(self.trace),
        }
    }
}

fn fields_of(ex: &LlmExchange) -> (String, String, Vec<String>) {
    let f = ex.fields();
    (
        f.thought.clone().unwrap_or_default(),
        f.xpath.clone().unwrap_or_default(),
        f.value.clone().unwrap_or_default(),
    )
}

enum Climb {
    /// Subtree containing the value, reached after `count` parent steps.
    Found {
        xpath: String,
        tree: DocumentTree,
        count: usize,
    },
    /// The value is nowhere in the current tree.
    NotFound,
}

pub fn generate_autocrawler(
    page: &DocumentTree,
    instruction: &str,
    gateway: &Gateway,
    cfg: &StrategyConfig,
) -> Result<Generated, GenerationError> {
    let mut run = Run::new(page, instruction, gateway, cfg);
    let mut tree = page.clone();
    let mut steps = Vec::new();
    for k in 0..cfg.d_max {
        let metrics_before = measure(&tree);
        let ex = run.crawler(&tree)?;
        let (thought, xpath, value) = fields_of(&ex);
        let mut exchanges = vec![ex];
        let record = |decision: Decision,
                      result: ExtractionResult,
                      exchanges: Vec<LlmExchange>,
                      pruning: Option<(String, TreeMetrics)>| {
            let (pruning_xpath, metrics_after) = pruning.unzip();
            StepRecord {
                iteration: k,
                metrics_before,
                exchanges,
                thought: thought.clone(),
                proposed_xpath: xpath.clone(),
                proposed_value: value.clone(),
                result,
                decision,
                pruning_xpath,
                metrics_after,
            }
        };

        if xpath.is_empty() {
            let step = record(
                Decision::Accept,
                ExtractionResult::ok(Vec::new()),
                exchanges,
                None,
            );
            run.trace.steps.push(step);
            return Ok(run.finish(Vec::new(), true));
        }

        let result = eval_text(&tree, &xpath);
        if run.consistent(&result, &value, &mut exchanges)? {
            steps.push(xpath.clone());
            let step = record(Decision::Accept, result, exchanges, None);
            run.trace.steps.push(step);
            return Ok(run.finish(steps, false));
        }

        let climb = if value.is_empty() {
            Climb::NotFound
        } else {
            step_back(&mut run, &tree, &xpath, &value, &mut exchanges)?
        };
        let step = match climb {
            Climb::Found {
                xpath: up,
                tree: sub,
                count,
            } if sub.len() < tree.len() => {
                let m = measure(&sub);
                steps.push(up.clone());
                tree = sub;
                record(
                    Decision::Stepback { count },
                    result,
                    exchanges,
                    Some((up, m)),
                )
            }
            Climb::Found { .. } => record(Decision::Retry, result, exchanges, None),
            Climb::NotFound => record(Decision::GiveUp, result, exchanges, None),
        };
        run.trace.steps.push(step);
    }
    Err(run.exhausted())
}

/// Appends `/..` to `xpath` until the selected subtree contains `value`.
/// A base xpath that selects nothing falls back to the tree root.
fn step_back(
    run: &mut Run<'_>,
    tree: &DocumentTree,
    xpath: &str,
    value: &[String],
    exchanges: &mut Vec<LlmExchange>,
) -> Result<Climb, GenerationError> {
    let mut candidate = xpath.to_string();
    // Each `/..` climbs one element level, so the root is passed after at
    // most `height + 1` steps.
    for count in 1..=tree.height() + 1 {
        candidate.push_str("/..");
        match eval_node(tree, &candidate) {
            Ok(sub) => {
                if run.contains(&sub, value, exchanges)? {
                    return Ok(Climb::Found {
                        xpath: candidate,
                        tree: sub,
                        count,
                    });
                }
            }
            Err(NodeSelectError::RootReached) => return Ok(Climb::NotFound),
            Err(
                NodeSelectError::NoMatch
                | NodeSelectError::NotAnElement
                | NodeSelectError::Invalid(_),
            ) => break,
        }
    }
    if run.contains(tree, value, exchanges)? {
        Ok(Climb::Found {
            xpath: candidate,
            tree: tree.clone(),
            count: 0,
        })
    } else {
        Ok(Climb::NotFound)
    }
}

pub fn generate_cot(
    page: &DocumentTree,
    instruction: &str,
    gateway: &Gateway,
    cfg: &StrategyConfig,
) -> Result<Generated, GenerationError> {
    let mut run = Run::new(page, instruction, gateway, cfg);
    let metrics_before = measure(page);
    let ex = run.crawler(page)?;
    let (thought, xpath, value) = fields_of(&ex);
    let result = if xpath.is_empty() {
        ExtractionResult::ok(Vec::new())
    } else {
        eval_text(page, &xpath)
    };
    run.trace.steps.push(StepRecord {
        iteration: 0,
        metrics_before,
        exchanges: vec![ex],
        thought,
        proposed_xpath: xpath.clone(),
        proposed_value: value,
        result,
        decision: Decision::Accept,
        pruning_xpath: None,
        metrics_after: None,
    });
    if xpath.is_empty() {
        Ok(run.finish(Vec::new(), true))
    } else {
        Ok(run.finish(vec![xpath], false))
    }
}

/// One entry of the reflexion history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    pub thought: String,
    pub xpath: String,
    pub result: Vec<String>,
}

/// Numbered thought/xpath/result blocks for the reflexion prompt.
pub fn render_history(history: &[HistoryEntry]) -> String {
    if history.is_empty() {
        return "No history yet.".to_string();
    }
    history
        .iter()
        .enumerate()
        .map(|(i, h)| {
            format!(
                "Step {}:\nThought: {}\nXPath: {}\nResult: {}",
                i + 1,
                h.thought,
                h.xpath,
                crate::llm::list_literal(&h.result)
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn generate_reflexion(
    page: &DocumentTree,
    instruction: &str,
    gateway: &Gateway,
    cfg: &StrategyConfig,
) -> Result<Generated, GenerationError> {
    let mut run = Run::new(page, instruction, gateway, cfg);
    let canonical = page.canonical_html();
    let html = page.to_html();
    let metrics_before = measure(page);
    let mut history: Vec<HistoryEntry> = Vec::new();
    for k in 0..cfg.d_max {
        let ex = if k == 0 {
            run.crawler(page)?
        } else {
            let fp = fingerprint(
                TemplateName::Reflexion,
                instruction,
                &canonical,
                &k.to_string(),
            );
            run.complete(PromptCall {
                template: TemplateName::Reflexion,
                slots: vec![
                    instruction.to_string(),
                    render_history(&history),
                    html.clone(),
                ],
                fingerprint: fp,
            })?
        };
        let (thought, xpath, value) = fields_of(&ex);
        let said_consistent = ex.fields().consistent == Some(true);
        let exchanges = vec![ex];
        let absent = xpath.is_empty();
        let result = if absent {
            ExtractionResult::ok(Vec::new())
        } else {
            eval_text(page, &xpath)
        };
        let accepted = absent
            || match cfg.judge {
                JudgeMode::Llm if k > 0 => said_consistent,
                _ if cfg.strict => {
                    result.status == ExtractionStatus::Ok
                        && values_equal_strict(&result.values, &value)
                }
                _ => {
                    result.status == ExtractionStatus::Ok
                        && values_consistent(&result.values, &value)
                }
            };
        history.push(HistoryEntry {
            thought: thought.clone(),
            xpath: xpath.clone(),
            result: result.values.clone(),
        });
        run.trace.steps.push(StepRecord {
            iteration: k,
            metrics_before,
            exchanges,
            thought,
            proposed_xpath: xpath.clone(),
            proposed_value: value,
            result,
            decision: if accepted {
                Decision::Accept
            } else {
                Decision::Retry
            },
            pruning_xpath: None,
            metrics_after: None,
        });
        if accepted {
            return Ok(if absent {
                run.finish(Vec::new(), true)
            } else {
                run.finish(vec![xpath], false)
            });
        }
    }
    Err(run.exhausted())
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("step {iteration}: {detail}")]
pub struct ReplayMismatch {
    pub iteration: usize,
    pub detail: String,
}

/// Re-executes the recorded xpaths of `trace` against `page` without any
/// model calls and checks every recorded result and pruning metric.
pub fn replay_trace(page: &DocumentTree, trace: &GenerationTrace) -> Result<usize, ReplayMismatch> {
    let mut tree = page.clone();
    let mut checked = 0;
    for step in &trace.steps {
        let fail = |detail: String| ReplayMismatch {
            iteration: step.iteration,
            detail,
        };
        let before = measure(&tree);
        if before != step.metrics_before {
            return Err(fail(format!(
                "tree metrics {before:?}, recorded {:?}",
                step.metrics_before
            )));
        }
        if !step.proposed_xpath.is_empty() {
            let result = eval_text(&tree, &step.proposed_xpath);
            if result != step.result {
                return Err(fail(format!(
                    "`{}` gave {result:?}, recorded {:?}",
                    step.proposed_xpath, step.result
                )));
            }
            checked += 1;
        }
        if let Some(up) = &step.pruning_xpath {
            let sub = eval_node(&tree, up).map_err(|e| fail(format!("`{up}`: {e}")))?;
            let m = measure(&sub);
            if Some(m) != step.metrics_after {
                return Err(fail(format!(
                    "pruned metrics {m:?}, recorded {:?}",
                    step.metrics_after
                )));
            }
            tree = sub;
            checked += 1;
        }
    }
    Ok(checked)
}
