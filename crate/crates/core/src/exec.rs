//! Running XPath action sequences against pages.
//!
//! An [`ActionSequence`] is an ordered list of XPath expressions. Every step
//! except the last selects a node whose subtree replaces the current page
//! (pruning); the last step extracts text values.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::{normalize_whitespace, DocumentTree, NodeKind};
use crate::xpath::{self, Axis, CompareOp, Expr, PathStart, Value, XNode, XPath, XPathError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Autocrawler,
    Cot,
    Reflexion,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Autocrawler => "autocrawler",
            Strategy::Cot => "cot",
            Strategy::Reflexion => "reflexion",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "autocrawler" => Ok(Strategy::Autocrawler),
            "cot" => Ok(Strategy::Cot),
            "reflexion" => Ok(Strategy::Reflexion),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed_page: String,
    pub strategy: Strategy,
}

/// Ordered XPath steps; all but the last prune, the last extracts.
///
/// An empty sequence is the "attribute absent" answer: running it extracts
/// nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSequence {
    pub steps: Vec<String>,
    pub provenance: Provenance,
}

impl ActionSequence {
    pub fn new(steps: Vec<String>, provenance: Provenance) -> Self {
        ActionSequence { steps, provenance }
    }

    pub fn is_absent(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn pruning_steps(&self) -> &[String] {
        match self.steps.split_last() {
            Some((_, prefix)) => prefix,
            None => &[],
        }
    }

    pub fn extraction_step(&self) -> Option<&str> {
        self.steps.last().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStatus {
    Ok,
    NoMatch,
    InvalidXpath,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub values: Vec<String>,
    pub status: ExtractionStatus,
    /// Index of the sequence step that failed, for sequence runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl ExtractionResult {
    pub fn ok(values: Vec<String>) -> Self {
        ExtractionResult {
            values,
            status: ExtractionStatus::Ok,
            failed_step: None,
            message: None,
        }
    }

    pub fn no_match() -> Self {
        ExtractionResult {
            values: Vec::new(),
            status: ExtractionStatus::NoMatch,
            failed_step: None,
            message: None,
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        ExtractionResult {
            values: Vec::new(),
            status: ExtractionStatus::InvalidXpath,
            failed_step: None,
            message: Some(message.into()),
        }
    }

    fn at_step(mut self, step: usize) -> Self {
        self.failed_step = Some(step);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NodeSelectError {
    #[error(transparent)]
    Invalid(#[from] XPathError),
    #[error("selection is empty")]
    NoMatch,
    #[error("first selected node is not an element")]
    NotAnElement,
    /// The selection climbed above the root element.
    #[error("selection reached the document root")]
    RootReached,
}

/// Evaluates `xpath` and returns the normalized, non-empty text of every
/// selected node in document order.
pub fn eval_text(tree: &DocumentTree, xpath: &str) -> ExtractionResult {
    let compiled = match XPath::parse(xpath) {
        Ok(x) => x,
        Err(e) => return ExtractionResult::invalid(e.to_string()),
    };
    match compiled.evaluate(tree) {
        Err(e) => ExtractionResult::invalid(e.to_string()),
        Ok(Value::Nodes(nodes)) if nodes.is_empty() => ExtractionResult::no_match(),
        Ok(Value::Nodes(nodes)) => ExtractionResult::ok(
            nodes
                .into_iter()
                .map(|n| normalize_whitespace(&xpath::string_value(tree, n)))
                .filter(|s| !s.is_empty())
                .collect(),
        ),
        Ok(other) => {
            let s = normalize_whitespace(&xpath::value_to_string(tree, &other));
            ExtractionResult::ok(if s.is_empty() { Vec::new() } else { vec![s] })
        }
    }
}

/// Selects the first matched node (document order) and returns its subtree.
pub fn eval_node(tree: &DocumentTree, xpath: &str) -> Result<DocumentTree, NodeSelectError> {
    let compiled = XPath::parse(xpath)?;
    match compiled.evaluate(tree)? {
        Value::Nodes(nodes) => match nodes.first() {
            None => Err(NodeSelectError::NoMatch),
            Some(XNode::Document) => Err(NodeSelectError::RootReached),
            Some(XNode::Node(i)) => match tree.node(*i).kind() {
                NodeKind::Element { .. } => Ok(tree.subtree(*i)),
                _ => Err(NodeSelectError::NotAnElement),
            },
            Some(XNode::Attribute(..)) => Err(NodeSelectError::NotAnElement),
        },
        _ => Err(NodeSelectError::NotAnElement),
    }
}

/// Applies the pruning steps of `seq` in order, returning every intermediate
/// tree (the page itself first).
pub fn prune_chain(
    page: &DocumentTree,
    seq: &ActionSequence,
) -> Result<Vec<DocumentTree>, ExtractionResult> {
    let mut chain = vec![page.clone()];
    for (i, step) in seq.pruning_steps().iter().enumerate() {
        let current = chain.last().expect("chain starts non-empty");
        match eval_node(current, step) {
            Ok(next) => chain.push(next),
            // climbing past the root leaves the tree as is
            Err(NodeSelectError::RootReached) => chain.push(current.clone()),
            Err(NodeSelectError::Invalid(e)) => {
                return Err(ExtractionResult::invalid(e.to_string()).at_step(i))
            }
            Err(NodeSelectError::NoMatch) | Err(NodeSelectError::NotAnElement) => {
                return Err(ExtractionResult::no_match().at_step(i))
            }
        }
    }
    Ok(chain)
}

pub fn run_sequence(page: &DocumentTree, seq: &ActionSequence) -> ExtractionResult {
    let Some(last) = seq.extraction_step() else {
        return ExtractionResult::ok(Vec::new());
    };
    let chain = match prune_chain(page, seq) {
        Ok(c) => c,
        Err(failed) => return failed,
    };
    let result = eval_text(chain.last().expect("non-empty chain"), last);
    if result.status == ExtractionStatus::Ok {
        result
    } else {
        result.at_step(seq.len() - 1)
    }
}

/// Thresholds for flagging page-specific literals in text predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragilityRule {
    pub min_digit_run: usize,
    pub max_literal_chars: usize,
}

impl Default for FragilityRule {
    fn default() -> Self {
        FragilityRule {
            min_digit_run: 4,
            max_literal_chars: 20,
        }
    }
}

impl FragilityRule {
    pub fn is_fragile(&self, literal: &str) -> bool {
        let mut run = 0;
        let mut longest = 0;
        for c in literal.chars() {
            if c.is_ascii_digit() {
                run += 1;
                longest = longest.max(run);
            } else {
                run = 0;
            }
        }
        longest >= self.min_digit_run || literal.chars().count() > self.max_literal_chars
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateReport {
    pub contains: usize,
    pub equal: usize,
    pub fragile_contains: usize,
    pub fragile_equal: usize,
    pub fragile_literals: Vec<String>,
}

impl PredicateReport {
    pub fn is_fragile(&self) -> bool {
        self.fragile_contains + self.fragile_equal > 0
    }

    pub fn fragile_count(&self) -> usize {
        self.fragile_contains + self.fragile_equal
    }
}

pub fn classify_predicates(xpath: &str) -> Result<PredicateReport, XPathError> {
    classify_predicates_with(xpath, &FragilityRule::default())
}

pub fn classify_predicates_with(
    xpath: &str,
    rule: &FragilityRule,
) -> Result<PredicateReport, XPathError> {
    let compiled = XPath::parse(xpath)?;
    let mut report = PredicateReport::default();
    visit(compiled.expr(), false, rule, &mut report);
    Ok(report)
}

fn visit(expr: &Expr, in_predicate: bool, rule: &FragilityRule, report: &mut PredicateReport) {
    match expr {
        Expr::Function(name, args) => {
            if in_predicate && name == "contains" {
                report.contains += 1;
                if let Some(lit) = text_literal(&args[0], &args[1]) {
                    if rule.is_fragile(lit) {
                        report.fragile_contains += 1;
                        report.fragile_literals.push(lit.to_string());
                    }
                }
            }
            for a in args {
                visit(a, in_predicate, rule, report);
            }
        }
        Expr::Compare(op, a, b) => {
            if in_predicate && *op == CompareOp::Eq {
                report.equal += 1;
                if let Some(lit) = text_literal(a, b) {
                    if rule.is_fragile(lit) {
                        report.fragile_equal += 1;
                        report.fragile_literals.push(lit.to_string());
                    }
                }
            }
            visit(a, in_predicate, rule, report);
            visit(b, in_predicate, rule, report);
        }
        Expr::Or(a, b) | Expr::And(a, b) | Expr::Arith(_, a, b) | Expr::Union(a, b) => {
            visit(a, in_predicate, rule, report);
            visit(b, in_predicate, rule, report);
        }
        Expr::Negate(a) => visit(a, in_predicate, rule, report),
        Expr::Path { start, steps } => {
            if let PathStart::Filter(f) = start {
                visit(f, in_predicate, rule, report);
            }
            for step in steps {
                for p in &step.predicates {
                    visit(p, true, rule, report);
                }
            }
        }
        Expr::Filter {
            primary,
            predicates,
        } => {
            visit(primary, in_predicate, rule, report);
            for p in predicates {
                visit(p, true, rule, report);
            }
        }
        Expr::Literal(_) | Expr::Number(_) | Expr::Variable(_) => {}
    }
}

/// The literal of a literal-vs-text comparison; `None` when the other side
/// reads an attribute.
fn text_literal<'e>(a: &'e Expr, b: &'e Expr) -> Option<&'e str> {
    let (lit, other) = match (a, b) {
        (Expr::Literal(l), other) | (other, Expr::Literal(l)) => (l, other),
        _ => return None,
    };
    if reads_attribute(other) {
        None
    } else {
        Some(lit)
    }
}

fn reads_attribute(e: &Expr) -> bool {
    match e {
        Expr::Path { steps, .. } => steps.last().is_some_and(|s| s.axis == Axis::Attribute),
        Expr::Function(name, args) if name == "string" || name == "normalize-space" => {
            args.first().is_some_and(reads_attribute)
        }
        _ => false,
    }
}
