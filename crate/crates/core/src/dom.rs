//! Immutable HTML document trees.
//!
//! Pages are parsed with a tolerant HTML5 parser and flattened into an arena
//! stored in document (pre-)order. Every node remembers the arena index it had
//! in the tree it was originally parsed from (its *origin*), so a pruned tree
//! can always be related back to the page it was cut from.

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use scraper::{Html, Node as HtmlNode};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomError {
    #[error("empty input")]
    EmptyInput,
    #[error("no recoverable element content in `{0}`")]
    ParseFailure(String),
}

/// Elements serialized without a closing tag.
const VOID_ELEMENTS: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "keygen", "link", "meta", "param",
    "source", "track", "wbr",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Element {
        tag: String,
        attrs: Vec<(String, String)>,
    },
    Text(String),
    Comment(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct NodeData {
    origin: usize,
    parent: Option<usize>,
    /// One past the last descendant in document order.
    end: usize,
    children: Vec<usize>,
    kind: NodeKind,
}

/// A parsed page, or a subtree pruned out of one.
///
/// The root (index 0) is always an element. Cloning is cheap.
#[derive(Clone)]
pub struct DocumentTree {
    source_id: Arc<str>,
    nodes: Arc<[NodeData]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeMetrics {
    pub token_count: usize,
    pub height: usize,
}

/// Hand-built tree description, mostly for tests and synthetic pages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fragment {
    Element {
        tag: String,
        attrs: Vec<(String, String)>,
        children: Vec<Fragment>,
    },
    Text(String),
    Comment(String),
}

pub fn el(tag: &str, attrs: &[(&str, &str)], children: Vec<Fragment>) -> Fragment {
    Fragment::Element {
        tag: tag.to_string(),
        attrs: attrs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        children,
    }
}

pub fn text(s: &str) -> Fragment {
    Fragment::Text(s.to_string())
}

struct Arena {
    nodes: Vec<NodeData>,
}

impl Arena {
    fn new() -> Self {
        Arena { nodes: Vec::new() }
    }

    fn open(&mut self, parent: Option<usize>, kind: NodeKind, origin: Option<usize>) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(NodeData {
            origin: origin.unwrap_or(idx),
            parent,
            end: idx + 1,
            children: Vec::new(),
            kind,
        });
        if let Some(p) = parent {
            self.nodes[p].children.push(idx);
        }
        idx
    }

    fn close(&mut self, idx: usize) {
        self.nodes[idx].end = self.nodes.len();
    }

    fn push_fragment(&mut self, parent: Option<usize>, frag: &Fragment) {
        match frag {
            Fragment::Element {
                tag,
                attrs,
                children,
            } => {
                let idx = self.open(
                    parent,
                    NodeKind::Element {
                        tag: tag.clone(),
                        attrs: attrs.clone(),
                    },
                    None,
                );
                for c in children {
                    self.push_fragment(Some(idx), c);
                }
                self.close(idx);
            }
            Fragment::Text(t) => {
                self.open(parent, NodeKind::Text(t.clone()), None);
            }
            Fragment::Comment(t) => {
                self.open(parent, NodeKind::Comment(t.clone()), None);
            }
        }
    }

    fn finish(self, source_id: Arc<str>) -> DocumentTree {
        DocumentTree {
            source_id,
            nodes: self.nodes.into(),
        }
    }
}

/// Parses raw HTML with html5ever's error-recovering tree builder.
pub fn parse_html(raw: &str, source_id: &str) -> Result<DocumentTree, DomError> {
    if raw.trim().is_empty() {
        return Err(DomError::EmptyInput);
    }
    let doc = Html::parse_document(raw);
    let html = doc
        .tree
        .root()
        .children()
        .find(|n| n.value().is_element())
        .ok_or_else(|| DomError::ParseFailure(source_id.to_string()))?;

    let mut arena = Arena::new();
    convert(&mut arena, None, html);
    let tree = arena.finish(source_id.into());

    if !has_content(&tree) && !mentions_wrapper_tag(raw) {
        return Err(DomError::ParseFailure(source_id.to_string()));
    }
    Ok(tree)
}

fn convert(arena: &mut Arena, parent: Option<usize>, node: ego_tree::NodeRef<'_, HtmlNode>) {
    match node.value() {
        HtmlNode::Element(e) => {
            let attrs = e
                .attrs()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
            let idx = arena.open(
                parent,
                NodeKind::Element {
                    tag: e.name().to_string(),
                    attrs,
                },
                None,
            );
            for child in node.children() {
                convert(arena, Some(idx), child);
            }
            arena.close(idx);
        }
        HtmlNode::Text(t) => {
            arena.open(parent, NodeKind::Text(t.text.to_string()), None);
        }
        HtmlNode::Comment(c) => {
            arena.open(parent, NodeKind::Comment(c.comment.to_string()), None);
        }
        _ => {}
    }
}

fn has_content(tree: &DocumentTree) -> bool {
    tree.nodes.iter().any(|n| match &n.kind {
        NodeKind::Element { tag, .. } => !matches!(tag.as_str(), "html" | "head" | "body"),
        NodeKind::Text(t) => !t.trim().is_empty(),
        NodeKind::Comment(_) => false,
    })
}

fn mentions_wrapper_tag(raw: &str) -> bool {
    let lower = raw.to_ascii_lowercase();
    ["<html", "<head", "<body"]
        .iter()
        .any(|t| lower.contains(t))
}

/// Resolves character references until none remain, so that doubly escaped
/// annotations (`&amp;amp;`) end up as the literal character as well.
pub fn resolve_escapes(s: &str) -> Cow<'_, str> {
    let mut current: Cow<'_, str> = Cow::Borrowed(s);
    for _ in 0..8 {
        if !current.contains('&') {
            break;
        }
        let next = html_escape::decode_html_entities(current.as_ref()).into_owned();
        if next == current.as_ref() {
            break;
        }
        current = Cow::Owned(next);
    }
    current
}

/// Collapses whitespace runs to one space and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalization shared by page text and gold annotations.
pub fn normalize_value(s: &str) -> String {
    normalize_whitespace(&resolve_escapes(s))
}

/// Drops `script`/`style` elements and comments, keeps only the `class`
/// attribute, resolves escapes in text and merges adjacent text nodes.
pub fn preprocess(tree: &DocumentTree) -> DocumentTree {
    let mut arena = Arena::new();
    copy_preprocessed(tree, 0, None, &mut arena);
    arena.finish(tree.source_id.clone())
}

fn copy_preprocessed(tree: &DocumentTree, idx: usize, parent: Option<usize>, arena: &mut Arena) {
    let node = &tree.nodes[idx];
    match &node.kind {
        NodeKind::Element { tag, attrs } => {
            if parent.is_some() && is_stripped_tag(tag) {
                return;
            }
            let attrs = attrs
                .iter()
                .filter(|(k, _)| k == "class")
                .take(1)
                .cloned()
                .collect();
            let new = arena.open(
                parent,
                NodeKind::Element {
                    tag: tag.clone(),
                    attrs,
                },
                Some(node.origin),
            );
            for &c in &node.children {
                copy_preprocessed(tree, c, Some(new), arena);
            }
            arena.close(new);
        }
        NodeKind::Text(t) => {
            let resolved = resolve_escapes(t);
            let parent = parent.expect("text node cannot be the root");
            let last = arena.nodes[parent].children.last().copied();
            if let Some(last) = last {
                if let NodeKind::Text(prev) = &mut arena.nodes[last].kind {
                    prev.push_str(&resolved);
                    return;
                }
            }
            arena.open(
                Some(parent),
                NodeKind::Text(resolved.into_owned()),
                Some(node.origin),
            );
        }
        NodeKind::Comment(_) => {}
    }
}

fn is_stripped_tag(tag: &str) -> bool {
    tag.eq_ignore_ascii_case("script") || tag.eq_ignore_ascii_case("style")
}

pub fn measure(tree: &DocumentTree) -> TreeMetrics {
    TreeMetrics {
        token_count: tree.canonical_html().split_whitespace().count(),
        height: tree.height(),
    }
}

impl DocumentTree {
    pub fn parse(raw: &str, source_id: &str) -> Result<Self, DomError> {
        parse_html(raw, source_id)
    }

    /// Builds a tree from a hand-written fragment. The fragment root must be
    /// an element.
    pub fn from_fragment(fragment: &Fragment, source_id: &str) -> Self {
        assert!(
            matches!(fragment, Fragment::Element { .. }),
            "tree root must be an element"
        );
        let mut arena = Arena::new();
        arena.push_fragment(None, fragment);
        arena.finish(source_id.into())
    }

    pub fn to_fragment(&self) -> Fragment {
        self.fragment_at(0)
    }

    fn fragment_at(&self, idx: usize) -> Fragment {
        let node = &self.nodes[idx];
        match &node.kind {
            NodeKind::Element { tag, attrs } => Fragment::Element {
                tag: tag.clone(),
                attrs: attrs.clone(),
                children: node.children.iter().map(|&c| self.fragment_at(c)).collect(),
            },
            NodeKind::Text(t) => Fragment::Text(t.clone()),
            NodeKind::Comment(t) => Fragment::Comment(t.clone()),
        }
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeRef<'_> {
        self.node(0)
    }

    pub fn node(&self, id: usize) -> NodeRef<'_> {
        assert!(id < self.nodes.len(), "node id {id} out of range");
        NodeRef { tree: self, id }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeRef<'_>> {
        (0..self.nodes.len()).map(move |id| NodeRef { tree: self, id })
    }

    /// Origin ids of every node; a pruned tree's set is a subset of its
    /// source's set.
    pub fn origin_set(&self) -> BTreeSet<usize> {
        self.nodes.iter().map(|n| n.origin).collect()
    }

    /// Copies the subtree rooted at `id` into a fresh tree.
    pub fn subtree(&self, id: usize) -> DocumentTree {
        assert!(
            matches!(self.nodes[id].kind, NodeKind::Element { .. }),
            "subtree root must be an element"
        );
        let base = id;
        let end = self.nodes[id].end;
        let nodes: Vec<NodeData> = self.nodes[base..end]
            .iter()
            .enumerate()
            .map(|(offset, n)| NodeData {
                origin: n.origin,
                parent: if offset == 0 {
                    None
                } else {
                    n.parent.map(|p| p - base)
                },
                end: n.end - base,
                children: n.children.iter().map(|c| c - base).collect(),
                kind: n.kind.clone(),
            })
            .collect();
        DocumentTree {
            source_id: self.source_id.clone(),
            nodes: nodes.into(),
        }
    }

    /// Max element depth, root counted as 1.
    pub fn height(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, n) in self.nodes.iter().enumerate() {
            if let NodeKind::Element { .. } = n.kind {
                let d = n.parent.map_or(1, |p| depth[p] + 1);
                depth[i] = d;
                max = max.max(d);
            }
        }
        max
    }

    /// Serialization with every tag and text fragment separated by spaces;
    /// token counts are taken over this form.
    pub fn canonical_html(&self) -> String {
        let mut out = String::new();
        self.write_canonical(0, &mut out);
        out
    }

    fn write_canonical(&self, idx: usize, out: &mut String) {
        let node = &self.nodes[idx];
        match &node.kind {
            NodeKind::Element { tag, attrs } => {
                write_open_tag(out, tag, attrs);
                if VOID_ELEMENTS.contains(&tag.as_str()) && node.children.is_empty() {
                    return;
                }
                for &c in &node.children {
                    out.push(' ');
                    self.write_canonical(c, out);
                }
                out.push_str(" </");
                out.push_str(tag);
                out.push('>');
            }
            NodeKind::Text(t) => out.push_str(&escape_text(t)),
            NodeKind::Comment(t) => {
                out.push_str("<!-- ");
                out.push_str(t);
                out.push_str(" -->");
            }
        }
    }

    /// Plain HTML serialization, used when showing a page to a model.
    pub fn to_html(&self) -> String {
        let mut out = String::new();
        self.write_html(0, &mut out);
        out
    }

    fn write_html(&self, idx: usize, out: &mut String) {
        let node = &self.nodes[idx];
        match &node.kind {
            NodeKind::Element { tag, attrs } => {
                write_open_tag(out, tag, attrs);
                if VOID_ELEMENTS.contains(&tag.as_str()) && node.children.is_empty() {
                    return;
                }
                for &c in &node.children {
                    self.write_html(c, out);
                }
                out.push_str("</");
                out.push_str(tag);
                out.push('>');
            }
            NodeKind::Text(t) => out.push_str(&escape_text(t)),
            NodeKind::Comment(t) => {
                out.push_str("<!--");
                out.push_str(t);
                out.push_str("-->");
            }
        }
    }

    /// All text of the tree joined by spaces, whitespace-normalized.
    pub fn text_content(&self) -> String {
        let parts: Vec<&str> = self
            .nodes
            .iter()
            .filter_map(|n| match &n.kind {
                NodeKind::Text(t) => Some(t.as_str()),
                _ => None,
            })
            .collect();
        normalize_whitespace(&parts.join(" "))
    }

    pub(crate) fn end_of(&self, id: usize) -> usize {
        self.nodes[id].end
    }

    pub(crate) fn parent_of(&self, id: usize) -> Option<usize> {
        self.nodes[id].parent
    }

    pub(crate) fn children_of(&self, id: usize) -> &[usize] {
        &self.nodes[id].children
    }

    pub(crate) fn kind_of(&self, id: usize) -> &NodeKind {
        &self.nodes[id].kind
    }
}

fn write_open_tag(out: &mut String, tag: &str, attrs: &[(String, String)]) {
    out.push('<');
    out.push_str(tag);
    for (k, v) in attrs {
        out.push(' ');
        out.push_str(k);
        out.push_str("=\"");
        out.push_str(&html_escape::encode_double_quoted_attribute(v));
        out.push('"');
    }
    out.push('>');
}

fn escape_text(t: &str) -> Cow<'_, str> {
    html_escape::encode_text(t)
}

impl PartialEq for DocumentTree {
    fn eq(&self, other: &Self) -> bool {
        self.source_id == other.source_id && self.nodes == other.nodes
    }
}

impl Eq for DocumentTree {}

impl fmt::Debug for DocumentTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DocumentTree")
            .field("source_id", &self.source_id)
            .field("html", &self.canonical_html())
            .finish()
    }
}

/// Same element structure, attributes and normalized text. Whitespace-only
/// text nodes are ignored.
pub fn structurally_equal(a: &DocumentTree, b: &DocumentTree) -> bool {
    fragments_equal(&a.to_fragment(), &b.to_fragment())
}

fn fragments_equal(a: &Fragment, b: &Fragment) -> bool {
    match (a, b) {
        (
            Fragment::Element {
                tag: ta,
                attrs: aa,
                children: ca,
            },
            Fragment::Element {
                tag: tb,
                attrs: ab,
                children: cb,
            },
        ) => {
            let keep = |f: &&Fragment| match f {
                Fragment::Text(t) => !t.trim().is_empty(),
                _ => true,
            };
            let ca: Vec<_> = ca.iter().filter(keep).collect();
            let cb: Vec<_> = cb.iter().filter(keep).collect();
            ta == tb
                && aa == ab
                && ca.len() == cb.len()
                && ca.iter().zip(&cb).all(|(x, y)| fragments_equal(x, y))
        }
        (Fragment::Text(x), Fragment::Text(y)) => {
            normalize_whitespace(x) == normalize_whitespace(y)
        }
        (Fragment::Comment(x), Fragment::Comment(y)) => x == y,
        _ => false,
    }
}

/// Borrowed handle to one node of a [`DocumentTree`].
#[derive(Clone, Copy)]
pub struct NodeRef<'a> {
    tree: &'a DocumentTree,
    id: usize,
}

impl<'a> NodeRef<'a> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn origin(&self) -> usize {
        self.tree.nodes[self.id].origin
    }

    pub fn kind(&self) -> &'a NodeKind {
        &self.tree.nodes[self.id].kind
    }

    pub fn is_element(&self) -> bool {
        matches!(self.kind(), NodeKind::Element { .. })
    }

    pub fn tag(&self) -> Option<&'a str> {
        match self.kind() {
            NodeKind::Element { tag, .. } => Some(tag),
            _ => None,
        }
    }

    pub fn attrs(&self) -> &'a [(String, String)] {
        match self.kind() {
            NodeKind::Element { attrs, .. } => attrs,
            _ => &[],
        }
    }

    pub fn attr(&self, name: &str) -> Option<&'a str> {
        self.attrs()
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn class(&self) -> Option<&'a str> {
        self.attr("class")
    }

    /// Text of a text or comment node.
    pub fn text(&self) -> Option<&'a str> {
        match self.kind() {
            NodeKind::Text(t) | NodeKind::Comment(t) => Some(t),
            _ => None,
        }
    }

    pub fn parent(&self) -> Option<NodeRef<'a>> {
        self.tree.nodes[self.id].parent.map(|id| NodeRef {
            tree: self.tree,
            id,
        })
    }

    pub fn children(&self) -> impl Iterator<Item = NodeRef<'a>> + 'a {
        let tree = self.tree;
        tree.nodes[self.id]
            .children
            .iter()
            .map(move |&id| NodeRef { tree, id })
    }

    /// Concatenated descendant text, unnormalized.
    pub fn string_value(&self) -> String {
        match self.kind() {
            NodeKind::Element { .. } => {
                let end = self.tree.nodes[self.id].end;
                self.tree.nodes[self.id + 1..end]
                    .iter()
                    .filter_map(|n| match &n.kind {
                        NodeKind::Text(t) => Some(t.as_str()),
                        _ => None,
                    })
                    .collect()
            }
            NodeKind::Text(t) | NodeKind::Comment(t) => t.clone(),
        }
    }
}

impl fmt::Debug for NodeRef<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeRef({}, {:?})", self.id, self.kind())
    }
}
