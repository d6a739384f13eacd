//! A self-contained XPath 1.0 engine over [`DocumentTree`]s.
//!
//! The whole core function library is supported; variables and extension
//! functions are not. Expressions are evaluated with the implicit document
//! node as context, so absolute and relative paths behave the same way.

mod eval;
mod lexer;
mod parser;

use thiserror::Error;

use crate::dom::DocumentTree;

pub use eval::{Value, XNode};
pub use parser::{ArithOp, Axis, CompareOp, Expr, NodeTest, PathStart, Step};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XPathError {
    #[error("invalid xpath: {0}")]
    Invalid(String),
}

/// A parsed XPath expression.
#[derive(Debug, Clone, PartialEq)]
pub struct XPath {
    source: String,
    expr: Expr,
}

impl XPath {
    pub fn parse(source: &str) -> Result<Self, XPathError> {
        Ok(XPath {
            source: source.to_string(),
            expr: parser::parse(source)?,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn evaluate(&self, tree: &DocumentTree) -> Result<Value, XPathError> {
        eval::Evaluator::new(tree).evaluate(&self.expr)
    }
}

/// XPath string-value of a node.
pub fn string_value(tree: &DocumentTree, node: XNode) -> String {
    eval::Evaluator::new(tree).string_value(node)
}

/// XPath `string()` conversion of any value.
pub fn value_to_string(tree: &DocumentTree, value: &Value) -> String {
    eval::Evaluator::new(tree).string(value)
}
