//! Diagnostics over generated sequences and traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::{measure, DocumentTree, TreeMetrics};
use crate::exec::{classify_predicates_with, prune_chain, ActionSequence, FragilityRule};
use crate::generation::{GenerationTrace, Outcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("original tree has zero tokens")]
    ZeroOrigin,
    #[error("execution time per page is not below direct extraction time")]
    NoBreakeven,
    #[error("pruning chain failed at step {0}")]
    ChainFailed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compression {
    pub length: f64,
    pub height: f64,
}

pub fn metric_ratios(
    original: TreeMetrics,
    pruned: TreeMetrics,
) -> Result<Compression, AnalysisError> {
    if original.token_count == 0 || original.height == 0 {
        return Err(AnalysisError::ZeroOrigin);
    }
    Ok(Compression {
        length: pruned.token_count as f64 / original.token_count as f64,
        height: pruned.height as f64 / original.height as f64,
    })
}

pub fn compression_ratios(
    original: &DocumentTree,
    final_pruned: &DocumentTree,
) -> Result<Compression, AnalysisError> {
    metric_ratios(measure(original), measure(final_pruned))
}

/// Ratios after each pruning step of `seq` applied to `page`; empty when
/// the sequence has no pruning steps.
pub fn chain_ratios(
    page: &DocumentTree,
    seq: &ActionSequence,
) -> Result<Vec<Compression>, AnalysisError> {
    let chain = prune_chain(page, seq)
        .map_err(|r| AnalysisError::ChainFailed(r.failed_step.unwrap_or(0)))?;
    let base = measure(page);
    chain[1..]
        .iter()
        .map(|t| metric_ratios(base, measure(t)))
        .collect()
}

/// Ratios after each step-back recorded in a trace.
pub fn trace_ratios(trace: &GenerationTrace) -> Result<Vec<Compression>, AnalysisError> {
    let Some(first) = trace.steps.first() else {
        return Ok(Vec::new());
    };
    trace
        .steps
        .iter()
        .filter_map(|s| s.metrics_after)
        .map(|m| metric_ratios(first.metrics_before, m))
        .collect()
}

/// Final compression of a trace: the last ratio, or 1 when nothing was
/// pruned.
pub fn final_ratio(trace: &GenerationTrace) -> Result<Compression, AnalysisError> {
    Ok(trace_ratios(trace)?.last().copied().unwrap_or(Compression {
        length: 1.0,
        height: 1.0,
    }))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthHistogram {
    pub counts: BTreeMap<usize, usize>,
}

impl LengthHistogram {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut counts = BTreeMap::new();
        for l in lengths {
            *counts.entry(l).or_insert(0) += 1;
        }
        LengthHistogram { counts }
    }

    /// `counts[i]` is the number of sequences of length `i + 1`.
    pub fn from_counts(counts: &[usize]) -> Self {
        LengthHistogram {
            counts: counts
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(|(i, c)| (i + 1, *c))
                .collect(),
        }
    }

    /// Successful traces only; failures and "absent" answers carry no
    /// sequence length.
    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a GenerationTrace>) -> Self {
        Self::from_lengths(traces.into_iter().filter_map(|t| match &t.outcome {
            Outcome::Success { sequence } => Some(sequence.len()),
            _ => None,
        }))
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn mean(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.counts.iter().map(|(l, c)| l * c).sum::<usize>() as f64 / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModelParams {
    pub n_s: u32,
    pub t_g: f64,
    pub t_s: f64,
    pub t_e: f64,
    pub t_d: f64,
    pub d_max: u32,
}

impl CostModelParams {
    /// Generation costs about `d_max` direct extractions, synthesis about
    /// one, and execution is negligible.
    pub fn approximate(n_s: u32, d_max: u32, t_d: f64) -> Self {
        CostModelParams {
            n_s,
            t_g: f64::from(d_max) * t_d,
            t_s: t_d,
            t_e: 0.0,
            t_d,
            d_max,
        }
    }
}

/// Smallest page count for which generating a wrapper is cheaper than
/// extracting every page directly.
pub fn breakeven_pages(p: &CostModelParams) -> Result<u64, AnalysisError> {
    let margin = p.t_d - p.t_e;
    if margin <= 0.0 {
        return Err(AnalysisError::NoBreakeven);
    }
    let bound = (f64::from(p.n_s) * p.t_g + p.t_s) / margin;
    // Tolerate float noise so exact integer bounds are not pushed up.
    Ok((bound - 1e-9).ceil().max(0.0) as u64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FragilityReport {
    pub contains: usize,
    pub equal: usize,
    pub fragile_contains: usize,
    pub fragile_equal: usize,
    pub invalid: usize,
}

impl FragilityReport {
    pub fn contains_ratio(&self) -> Option<f64> {
        (self.contains > 0).then(|| self.fragile_contains as f64 / self.contains as f64)
    }

    pub fn equal_ratio(&self) -> Option<f64> {
        (self.equal > 0).then(|| self.fragile_equal as f64 / self.equal as f64)
    }
}

pub fn fragility_report<'a>(
    sequences: impl IntoIterator<Item = &'a ActionSequence>,
    rule: &FragilityRule,
) -> FragilityReport {
    let mut r = FragilityReport::default();
    for seq in sequences {
        for step in &seq.steps {
            match classify_predicates_with(step, rule) {
                Ok(p) => {
                    r.contains += p.contains;
                    r.equal += p.equal;
                    r.fragile_contains += p.fragile_contains;
                    r.fragile_equal += p.fragile_equal;
                }
                Err(_) => r.invalid += 1,
            }
        }
    }
    r
}

fn fmt_opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

pub fn length_table(rows: &[(String, LengthHistogram)], d_max: usize) -> String {
    let mut out = String::from("model");
    for l in 1..=d_max {
        out.push_str(&format!("\t{l}"));
    }
    out.push_str("\tmean\n");
    for (name, h) in rows {
        out.push_str(name);
        for l in 1..=d_max {
            out.push_str(&format!("\t{}", h.counts.get(&l).copied().unwrap_or(0)));
        }
        out.push_str(&format!("\t{}\n", fmt_opt(h.mean(), 2)));
    }
    out
}

pub fn fragility_table(r: &FragilityReport) -> String {
    format!(
        "predicate\ttotal\tfragile\tratio\ncontains\t{}\t{}\t{}\nequal\t{}\t{}\t{}\n",
        r.contains,
        r.fragile_contains,
        fmt_opt(r.contains_ratio(), 4),
        r.equal,
        r.fragile_equal,
        fmt_opt(r.equal_ratio(), 4)
    )
}

pub fn compression_table(rows: &[(String, Compression)]) -> String {
    let mut out = String::from("case\tlength_ratio\theight_ratio\n");
    for (name, c) in rows {
        out.push_str(&format!("{name}\t{:.4}\t{:.4}\n", c.length, c.height));
    }
    out
}

pub fn breakeven_table(p: &CostModelParams) -> String {
    let n = breakeven_pages(p).map_or_else(|_| "none".to_string(), |n| n.to_string());
    format!(
        "n_s\tT_g\tT_s\tT_e\tT_d\tbreakeven_pages\n{}\t{}\t{}\t{}\t{}\t{n}\n",
        p.n_s, p.t_g, p.t_s, p.t_e, p.t_d
    )
}
