//! Choosing one sequence among per-seed candidates.

use std::cmp::Reverse;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::DocumentTree;
use crate::exec::{
    classify_predicates_with, run_sequence, ActionSequence, ExtractionResult, ExtractionStatus,
    FragilityRule,
};
use crate::llm::{
    fingerprint, list_literal, values_consistent, Gateway, JudgeMode, LlmError, LlmExchange,
    PromptCall, TemplateName,
};

pub const DEFAULT_SEEDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error("case has {available} pages, {requested} seeds requested")]
    TooFewPages { available: usize, requested: usize },
    #[error("no candidate sequences")]
    NoCandidates,
    #[error(transparent)]
    Backend(#[from] LlmError),
}

/// Seed for drawing the seed pages of one case.
pub fn case_seed(run_seed: u64, case_id: &str) -> u64 {
    crate::derive_seed(run_seed, &format!("seeds/{case_id}"))
}

/// Samples `n_s` distinct ids uniformly, reproducibly from `seed`. The
/// result keeps the input order.
pub fn select_seeds(ids: &[String], n_s: usize, seed: u64) -> Result<Vec<String>, SynthesisError> {
    if n_s == 0 || ids.len() < n_s {
        return Err(SynthesisError::TooFewPages {
            available: ids.len(),
            requested: n_s,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, ids.len(), n_s).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| ids[i].clone()).collect())
}

/// `matrix[i][j]` is candidate `i` run on seed `j`.
pub fn cross_execute(
    candidates: &[ActionSequence],
    seeds: &[DocumentTree],
) -> Vec<Vec<ExtractionResult>> {
    candidates
        .par_iter()
        .map(|c| seeds.iter().map(|s| run_sequence(s, c)).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub coverage: usize,
    pub fragile: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub index: usize,
    pub sequence: ActionSequence,
    pub scores: Vec<CandidateScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange: Option<LlmExchange>,
}

/// Scores candidates against the values each seed is expected to yield.
/// `expected[j]` is `None` when seed `j` has no reference values (its own
/// generation failed), in which case nobody covers it.
pub fn score_candidates(
    candidates: &[ActionSequence],
    matrix: &[Vec<ExtractionResult>],
    expected: &[Option<Vec<String>>],
    rule: &FragilityRule,
) -> Vec<CandidateScore> {
    candidates
        .iter()
        .zip(matrix)
        .map(|(c, row)| CandidateScore {
            coverage: row
                .iter()
                .zip(expected)
                .filter(|(r, e)| match e {
                    Some(e) => {
                        r.status != ExtractionStatus::InvalidXpath
                            && values_consistent(&r.values, e)
                    }
                    None => false,
                })
                .count(),
            fragile: c
                .steps
                .iter()
                .map(|s| {
                    classify_predicates_with(s, rule).map_or(usize::MAX / 64, |r| r.fragile_count())
                })
                .sum(),
            length: c.len(),
        })
        .collect()
}

/// Highest coverage, then fewest fragile literals, then shortest, then
/// lowest index.
pub fn rank(scores: &[CandidateScore]) -> Option<usize> {
    (0..scores.len()).min_by_key(|&i| {
        (
            Reverse(scores[i].coverage),
            scores[i].fragile,
            scores[i].length,
            i,
        )
    })
}

/// The text listing candidates and their per-seed results for the
/// synthesis prompt.
pub fn render_candidates(
    candidates: &[ActionSequence],
    matrix: &[Vec<ExtractionResult>],
) -> String {
    candidates
        .iter()
        .zip(matrix)
        .enumerate()
        .map(|(i, (c, row))| {
            let results = row
                .iter()
                .enumerate()
                .map(|(j, r)| format!("webpage {j}: {}", list_literal(&r.values)))
                .collect::<Vec<_>>()
                .join("\n");
            format!("Action sequence {i}: {}\n{results}", list_literal(&c.steps))
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn synthesize(
    candidates: &[ActionSequence],
    matrix: &[Vec<ExtractionResult>],
    expected: &[Option<Vec<String>>],
    gateway: &Gateway,
    mode: JudgeMode,
    instruction: &str,
) -> Result<Choice, SynthesisError> {
    if candidates.is_empty() {
        return Err(SynthesisError::NoCandidates);
    }
    let scores = score_candidates(candidates, matrix, expected, &FragilityRule::default());
    let (index, exchange) = match mode {
        JudgeMode::Deterministic => (rank(&scores).expect("non-empty"), None),
        JudgeMode::Llm => {
            let listing = render_candidates(candidates, matrix);
            let fp = fingerprint(TemplateName::Synthesis, instruction, "", &listing);
            let ex = gateway.complete(&PromptCall {
                template: TemplateName::Synthesis,
                slots: vec![instruction.to_string(), listing],
                fingerprint: fp,
            })?;
            let n = ex.fields().number.unwrap_or(0);
            let index = n.clamp(0, candidates.len() as i64 - 1) as usize;
            (index, Some(ex))
        }
    };
    Ok(Choice {
        index,
        sequence: candidates[index].clone(),
        scores,
        exchange,
    })
}
