//! Shared helpers for integration tests: random DOM and XPath generators and
//! a reference XPath engine (sxd-xpath) used as an independent oracle.

#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::Rng;
use sxd_document::dom::{ChildOfElement, ChildOfRoot, Element, ParentOfChild};
use sxd_document::Package;
use sxd_xpath::nodeset::Node as SxdNode;
use sxd_xpath::{Context, Factory, Value as SxdValue};

use wrapsmith_core::dom::{el, normalize_whitespace, DocumentTree, Fragment, NodeKind};

const TAGS: &[&str] = &["div", "span", "p", "b", "ul", "li"];
const CLASSES: &[Option<&str>] = &[None, None, Some("a"), Some("b"), Some("a b"), Some("x")];
const WORDS: &[&str] = &[
    "Height:",
    "6-9",
    "250",
    "foo bar",
    " Weight: ",
    "x",
    "  ",
    "Team",
];

pub fn random_fragment<R: Rng>(rng: &mut R, depth: usize) -> Fragment {
    let tag = *TAGS.choose(rng).unwrap();
    let class = *CLASSES.choose(rng).unwrap();
    let attrs: Vec<(&str, &str)> = class.map(|c| vec![("class", c)]).unwrap_or_default();
    let mut children = Vec::new();
    if depth > 0 {
        let n = rng.random_range(1..4);
        let mut last_was_text = false;
        for _ in 0..n {
            if !last_was_text && rng.random_bool(0.35) {
                children.push(Fragment::Text(WORDS.choose(rng).unwrap().to_string()));
                last_was_text = true;
            } else {
                children.push(random_fragment(rng, depth - 1));
                last_was_text = false;
            }
        }
    } else if rng.random_bool(0.7) {
        children.push(Fragment::Text(WORDS.choose(rng).unwrap().to_string()));
    }
    el(tag, &attrs, children)
}

pub fn random_tree<R: Rng>(rng: &mut R, id: &str) -> DocumentTree {
    let body = el(
        "body",
        &[],
        (0..rng.random_range(2..5))
            .map(|_| random_fragment(rng, 3))
            .collect(),
    );
    DocumentTree::from_fragment(&body, id)
}

fn random_predicate<R: Rng>(rng: &mut R) -> &'static str {
    const PREDS: &[&str] = &[
        "[@class='a']",
        "[contains(@class,'a')]",
        "[1]",
        "[2]",
        "[last()]",
        "[contains(text(),'Height')]",
        "[text()='250']",
        "[not(@class)]",
        "[b]",
        "[position()<3]",
        "[@class]",
        "[.='x']",
    ];
    PREDS.choose(rng).unwrap()
}

pub fn random_xpath<R: Rng>(rng: &mut R) -> String {
    let mut s = String::new();
    let steps = rng.random_range(1..4);
    for i in 0..steps {
        let last = i + 1 == steps;
        let roll = rng.random_range(0..10);
        if i > 0 && roll == 0 {
            s.push_str("/..");
            continue;
        }
        let sep = if i == 0 || rng.random_bool(0.5) {
            "//"
        } else {
            "/"
        };
        s.push_str(sep);
        match roll {
            1 if i > 0 => s.push_str("following-sibling::"),
            2 if i > 0 => s.push_str("preceding-sibling::"),
            3 if i > 0 => s.push_str("ancestor::"),
            _ => {}
        }
        if last && rng.random_bool(0.25) {
            s.push_str("text()");
        } else if rng.random_bool(0.15) {
            s.push('*');
        } else {
            s.push_str(TAGS.choose(rng).unwrap());
        }
        if rng.random_bool(0.3) {
            s.push_str(random_predicate(rng));
        }
    }
    s
}

/// Reference evaluation of a tree + xpath through sxd-xpath.
pub struct Oracle {
    package: Package,
}

#[derive(Debug, PartialEq, Eq)]
pub enum OracleNode {
    Root,
    /// Child-index path from the root element.
    Element(Vec<usize>),
    Other,
}

impl Oracle {
    pub fn new(tree: &DocumentTree) -> Self {
        let package = Package::new();
        {
            let doc = package.as_document();
            let root = build(&doc, &tree.to_fragment());
            doc.root().append_child(root);
        }
        Oracle { package }
    }

    fn eval(&self, xpath: &str) -> Option<Vec<SxdNode<'_>>> {
        let doc = self.package.as_document();
        let factory = Factory::new();
        let compiled = factory.build(xpath).ok()??;
        let ctx = Context::new();
        match compiled.evaluate(&ctx, doc.root()).ok()? {
            SxdValue::Nodeset(ns) => Some(ns.document_order()),
            _ => None,
        }
    }

    /// Normalized non-empty string values of the selection, or `None` when
    /// the reference engine rejects the expression.
    pub fn text(&self, xpath: &str) -> Option<Vec<String>> {
        self.eval(xpath).map(|nodes| {
            nodes
                .iter()
                .map(|n| normalize_whitespace(&n.string_value()))
                .filter(|s| !s.is_empty())
                .collect()
        })
    }

    pub fn matched(&self, xpath: &str) -> Option<usize> {
        self.eval(xpath).map(|n| n.len())
    }

    pub fn first_node(&self, xpath: &str) -> Option<Option<OracleNode>> {
        self.eval(xpath).map(|nodes| {
            nodes.first().map(|n| match n {
                SxdNode::Root(_) => OracleNode::Root,
                SxdNode::Element(e) => OracleNode::Element(element_path(*e)),
                _ => OracleNode::Other,
            })
        })
    }
}

fn build<'d>(doc: &sxd_document::dom::Document<'d>, frag: &Fragment) -> Element<'d> {
    let Fragment::Element {
        tag,
        attrs,
        children,
    } = frag
    else {
        panic!("root must be an element")
    };
    let e = doc.create_element(tag.as_str());
    for (k, v) in attrs {
        e.set_attribute_value(k.as_str(), v.as_str());
    }
    for c in children {
        match c {
            Fragment::Element { .. } => {
                let child = build(doc, c);
                e.append_child(child);
            }
            Fragment::Text(t) => {
                let child = doc.create_text(t);
                e.append_child(child);
            }
            Fragment::Comment(t) => {
                let child = doc.create_comment(t);
                e.append_child(child);
            }
        }
    }
    e
}

fn element_path(e: Element<'_>) -> Vec<usize> {
    let mut path = Vec::new();
    let mut cur = e;
    loop {
        match cur.parent() {
            Some(ParentOfChild::Element(p)) => {
                let idx = p
                    .children()
                    .iter()
                    .position(|c| matches!(c, ChildOfElement::Element(x) if *x == cur))
                    .unwrap();
                path.push(idx);
                cur = p;
            }
            Some(ParentOfChild::Root(r)) => {
                debug_assert!(r
                    .children()
                    .iter()
                    .any(|c| matches!(c, ChildOfRoot::Element(x) if *x == cur)));
                break;
            }
            None => break,
        }
    }
    path.reverse();
    path
}

/// Child-index path of an element of our own tree, comparable with
/// [`OracleNode::Element`].
pub fn tree_path(tree: &DocumentTree, id: usize) -> Vec<usize> {
    let mut path = Vec::new();
    let mut cur = tree.node(id);
    while let Some(p) = cur.parent() {
        let idx = p.children().position(|c| c.id() == cur.id()).unwrap();
        path.push(idx);
        cur = p;
    }
    path.reverse();
    path
}

/// Finds the node of `page` whose origin matches the root of `sub`.
pub fn origin_path(page: &DocumentTree, sub: &DocumentTree) -> Vec<usize> {
    let origin = sub.root().origin();
    let id = page
        .nodes()
        .find(|n| n.origin() == origin)
        .map(|n| n.id())
        .unwrap();
    tree_path(page, id)
}

pub fn is_text(kind: &NodeKind) -> bool {
    matches!(kind, NodeKind::Text(_))
}
