//! Executable evaluation of a sequence over a whole case.
//!
//! Pages are compared as normalized value sets. Case precision and recall
//! are micro-averaged over pages, then the case gets one of six labels.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::normalize_value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Correct,
    Prec,
    Reca,
    Unex,
    Over,
    Else,
}

impl Label {
    pub const ALL: [Label; 6] = [
        Label::Correct,
        Label::Prec,
        Label::Reca,
        Label::Unex,
        Label::Over,
        Label::Else,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Correct => "Correct",
            Label::Prec => "Prec",
            Label::Reca => "Reca",
            Label::Unex => "Unex",
            Label::Over => "Over",
            Label::Else => "Else",
        }
    }

    fn index(self) -> usize {
        Label::ALL.iter().position(|l| *l == self).expect("listed")
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("case has no pages")]
    EmptyCase,
    #[error("no cases to aggregate")]
    NoCases,
}

fn value_set(values: &[String]) -> BTreeSet<String> {
    values
        .iter()
        .map(|v| normalize_value(v))
        .filter(|v| !v.is_empty())
        .collect()
}

/// Set sizes for one page: |extracted ∩ gold|, |extracted|, |gold|.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub hit: usize,
    pub extracted: usize,
    pub gold: usize,
}

impl Counts {
    pub fn of(extracted: &[String], gold: &[String]) -> Self {
        let (e, g) = (value_set(extracted), value_set(gold));
        Counts {
            hit: e.intersection(&g).count(),
            extracted: e.len(),
            gold: g.len(),
        }
    }

    /// Precision and recall; both-empty counts as (1, 1).
    pub fn precision_recall(&self) -> (Option<f64>, Option<f64>) {
        if self.extracted == 0 && self.gold == 0 {
            return (Some(1.0), Some(1.0));
        }
        let ratio = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
        (ratio(self.hit, self.extracted), ratio(self.hit, self.gold))
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            hit: self.hit + o.hit,
            extracted: self.extracted + o.extracted,
            gold: self.gold + o.gold,
        }
    }
}

/// Set-based page precision and recall. Precision is undefined for an
/// empty extraction and recall for an empty gold set.
pub fn score_page(extracted: &[String], gold: &[String]) -> (Option<f64>, Option<f64>) {
    let c = Counts::of(extracted, gold);
    let ratio = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    (ratio(c.hit, c.extracted), ratio(c.hit, c.gold))
}

pub fn f1(p: Option<f64>, r: Option<f64>) -> Option<f64> {
    match (p, r) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        (Some(x), None) | (None, Some(x)) if x == 0.0 => Some(0.0),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageDetail {
    pub page_id: String,
    pub counts: Counts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub label: Label,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub counts: Counts,
    pub pages: Vec<PageDetail>,
}

/// One page of a case: id, extracted values, gold values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageValues {
    pub page_id: String,
    pub extracted: Vec<String>,
    pub gold: Vec<String>,
}

/// Label from micro sums, in priority order Over, Unex, Correct, Prec,
/// Reca, Else.
pub fn label_of(c: Counts) -> Label {
    if c.gold == 0 && c.extracted > 0 {
        Label::Over
    } else if c.gold > 0 && c.hit == 0 {
        Label::Unex
    } else if c.hit == c.extracted && c.hit == c.gold {
        Label::Correct
    } else if c.hit == c.extracted {
        Label::Prec
    } else if c.hit == c.gold {
        Label::Reca
    } else {
        Label::Else
    }
}

pub fn classify_case(case_id: &str, pages: &[PageValues]) -> Result<CaseOutcome, EvalError> {
    if pages.is_empty() {
        return Err(EvalError::EmptyCase);
    }
    let details: Vec<PageDetail> = pages
        .iter()
        .map(|p| {
            let counts = Counts::of(&p.extracted, &p.gold);
            let (precision, recall) = counts.precision_recall();
            PageDetail {
                page_id: p.page_id.clone(),
                counts,
                precision,
                recall,
            }
        })
        .collect();
    let total = details
        .iter()
        .fold(Counts::default(), |acc, d| acc + d.counts);
    let (precision, recall) = total.precision_recall();
    Ok(CaseOutcome {
        case_id: case_id.to_string(),
        label: label_of(total),
        precision,
        recall,
        f1: f1(precision, recall),
        counts: total,
        pages: details,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub total: usize,
    /// Case counts in [`Label::ALL`] order.
    pub counts: [usize; 6],
    pub ratios: [f64; 6],
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Cases left out of each macro mean because the metric is undefined.
    pub skipped_precision: usize,
    pub skipped_recall: usize,
    pub skipped_f1: usize,
}

impl SuiteReport {
    pub fn ratio(&self, label: Label) -> f64 {
        self.ratios[label.index()]
    }

    pub fn count(&self, label: Label) -> usize {
        self.counts[label.index()]
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), skipped)
}

pub fn aggregate(outcomes: &[CaseOutcome]) -> Result<SuiteReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::NoCases);
    }
    let mut counts = [0usize; 6];
    for o in outcomes {
        counts[o.label.index()] += 1;
    }
    let total = outcomes.len();
    let ratios = counts.map(|c| c as f64 / total as f64);
    let (precision, skipped_precision) = mean_defined(outcomes.iter().map(|o| o.precision));
    let (recall, skipped_recall) = mean_defined(outcomes.iter().map(|o| o.recall));
    let (f1, skipped_f1) = mean_defined(outcomes.iter().map(|o| o.f1));
    Ok(SuiteReport {
        total,
        counts,
        ratios,
        precision,
        recall,
        f1,
        skipped_precision,
        skipped_recall,
        skipped_f1,
    })
}

pub const REPORT_HEADER: &str = "model\tmethod\tCorrect\tPrec\tReca\tUnex\tOver\tElse\tP\tR\tF1";

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0))
}

/// One tab-separated report row, percentages with two decimals.
pub fn report_row(model: &str, method: &str, r: &SuiteReport) -> String {
    let mut cols = vec![model.to_string(), method.to_string()];
    cols.extend(r.ratios.iter().map(|x| pct(Some(*x))));
    cols.extend([pct(r.precision), pct(r.recall), pct(r.f1)]);
    cols.join("\t")
}

pub fn report_table(rows: &[(String, String, SuiteReport)]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for (model, method, r) in rows {
        out.push_str(&report_row(model, method, r));
        out.push('\n');
    }
    out
}
