//! The html5ever-backed parser and the token/height metrics checked against
//! an independent parser (tl) on random well-formed fragments.

use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wrapsmith_core::dom::{
    el, measure, parse_html, preprocess, text, DocumentTree, Fragment, NodeKind, TreeMetrics,
};
use wrapsmith_core::exec::{ActionSequence, Provenance, Strategy};

/// Preorder projection: (depth, tag, class) for elements, (depth, text) for
/// non-blank text.
#[derive(Debug, PartialEq, Eq)]
enum Item {
    Tag(usize, String, Option<String>),
    Text(usize, String),
}

fn norm(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn ours(tree: &DocumentTree, id: usize, depth: usize, out: &mut Vec<Item>) {
    let n = tree.node(id);
    match n.kind() {
        NodeKind::Element { tag, .. } => {
            out.push(Item::Tag(depth, tag.clone(), n.class().map(str::to_string)));
            for c in n.children() {
                ours(tree, c.id(), depth + 1, out);
            }
        }
        NodeKind::Text(t) if !t.trim().is_empty() => out.push(Item::Text(depth, norm(t))),
        _ => {}
    }
}

fn theirs(node: &tl::Node<'_>, parser: &tl::Parser<'_>, depth: usize, out: &mut Vec<Item>) {
    match node {
        tl::Node::Tag(t) => {
            let class = t.attributes().class().map(|c| c.as_utf8_str().into_owned());
            out.push(Item::Tag(
                depth,
                t.name().as_utf8_str().to_lowercase(),
                class,
            ));
            for h in t.children().top().iter() {
                theirs(h.get(parser).unwrap(), parser, depth + 1, out);
            }
        }
        tl::Node::Raw(b) => {
            let s = b.as_utf8_str();
            if !s.trim().is_empty() {
                out.push(Item::Text(depth, norm(&s)));
            }
        }
        tl::Node::Comment(_) => {}
    }
}

/// Token count and element height of the first top-level element per tl,
/// using the documented tokenizer: every open tag split on whitespace,
/// one token per close tag, whitespace-split words of each text.
fn tl_metrics(node: &tl::Node<'_>, parser: &tl::Parser<'_>) -> TreeMetrics {
    match node {
        tl::Node::Tag(t) => {
            let mut open = format!("<{}", t.name().as_utf8_str());
            if let Some(c) = t.attributes().class() {
                open.push_str(&format!(" class=\"{}\"", c.as_utf8_str()));
            }
            open.push('>');
            let mut m = TreeMetrics {
                token_count: open.split_whitespace().count() + 1,
                height: 1,
            };
            for h in t.children().top().iter() {
                let c = tl_metrics(h.get(parser).unwrap(), parser);
                m.token_count += c.token_count;
                if c.height > 0 {
                    m.height = m.height.max(c.height + 1);
                }
            }
            m
        }
        tl::Node::Raw(b) => TreeMetrics {
            token_count: b.as_utf8_str().split_whitespace().count(),
            height: 0,
        },
        tl::Node::Comment(_) => TreeMetrics {
            token_count: 0,
            height: 0,
        },
    }
}

// Tags without implicit end-tag rules, so both parsers agree on the shape.
const TAGS: &[&str] = &["div", "span", "b", "em", "section"];
const CLASSES: &[Option<&str>] = &[None, Some("a"), Some("b c"), Some("x-1")];
const WORDS: &[&str] = &["Height:", "6-9", "foo bar", "  Team  ", "250 lbs"];

fn fragment(rng: &mut ChaCha8Rng, depth: usize) -> Fragment {
    let tag = *TAGS.choose(rng).unwrap();
    let attrs: Vec<(&str, &str)> = CLASSES
        .choose(rng)
        .unwrap()
        .map(|c| vec![("class", c)])
        .unwrap_or_default();
    let mut children = Vec::new();
    let mut last_text = false;
    for _ in 0..if depth == 0 {
        1
    } else {
        rng.random_range(1..4)
    } {
        if depth == 0 || (!last_text && rng.random_bool(0.4)) {
            children.push(text(WORDS.choose(rng).unwrap()));
            last_text = true;
        } else {
            children.push(fragment(rng, depth - 1));
            last_text = false;
        }
    }
    el(tag, &attrs, children)
}

fn tl_items(html: &str) -> (Vec<Item>, TreeMetrics) {
    let dom = tl::parse(html, tl::ParserOptions::default()).unwrap();
    let parser = dom.parser();
    let root = dom
        .children()
        .iter()
        .map(|h| h.get(parser).unwrap())
        .find(|n| n.as_tag().is_some())
        .unwrap();
    let mut items = Vec::new();
    theirs(root, parser, 0, &mut items);
    (items, tl_metrics(root, parser))
}

#[test]
fn unclosed_container_matches_reference_parser() {
    let raw = r#"<div class="a"><div>y</div>"#;
    let tree = parse_html(raw, "u").unwrap();
    let div = tree
        .nodes()
        .find(|n| n.class() == Some("a"))
        .expect("outer div kept");
    let sub = tree.subtree(div.id());
    let mut mine = Vec::new();
    ours(&sub, sub.root().id(), 0, &mut mine);
    let (reference, _) = tl_items(raw);
    assert_eq!(mine, reference);
    assert_eq!(
        mine,
        vec![
            Item::Tag(0, "div".into(), Some("a".into())),
            Item::Tag(1, "div".into(), None),
            Item::Text(2, "y".into()),
        ]
    );
}

#[test]
fn random_fragments_match_reference_parser() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for i in 0..300 {
        let frag = el(
            "body",
            &[],
            vec![fragment(&mut rng, 3), fragment(&mut rng, 2)],
        );
        let html = DocumentTree::from_fragment(&frag, "f").to_html();
        let tree = parse_html(&html, "f").unwrap();
        let body = tree.nodes().find(|n| n.tag() == Some("body")).unwrap();
        let sub = tree.subtree(body.id());
        let mut mine = Vec::new();
        ours(&sub, sub.root().id(), 0, &mut mine);
        let (reference, metrics) = tl_items(&html);
        assert_eq!(mine, reference, "case {i}: {html}");
        assert_eq!(measure(&sub), metrics, "case {i}: {html}");
        // The parsed page adds <html> and an empty <head>.
        assert_eq!(
            measure(&tree),
            TreeMetrics {
                token_count: metrics.token_count + 4,
                height: metrics.height + 1
            }
        );
    }
}

#[test]
fn empty_document_metrics() {
    let tree = parse_html("<html><body></body></html>", "e").unwrap();
    assert_eq!(
        measure(&tree),
        TreeMetrics {
            token_count: 6,
            height: 2
        }
    );
}

fn noisy(rng: &mut ChaCha8Rng, depth: usize) -> Fragment {
    match rng.random_range(0..10) {
        0 => el("script", &[], vec![text("var a = 1 < 2;")]),
        1 => el("style", &[("id", "s")], vec![text("p { }")]),
        2 => Fragment::Comment("note".into()),
        3 => text("a &amp;amp; b"),
        _ => {
            let Fragment::Element { tag, mut attrs, .. } = fragment(rng, 0) else {
                unreachable!()
            };
            attrs.push(("id".into(), "i".into()));
            let n = if depth == 0 {
                0
            } else {
                rng.random_range(1..4)
            };
            Fragment::Element {
                tag,
                attrs,
                children: (0..n).map(|_| noisy(rng, depth - 1)).collect(),
            }
        }
    }
}

proptest! {
    #[test]
    fn preprocess_is_idempotent_and_shrinks(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frag = el("body", &[], (0..3).map(|_| noisy(&mut rng, 3)).collect());
        let tree = DocumentTree::from_fragment(&frag, "p");
        let once = preprocess(&tree);
        let twice = preprocess(&once);
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.len() <= tree.len());
        prop_assert!(measure(&once).token_count <= measure(&tree).token_count);
        prop_assert!(once.nodes().all(|n| n.attrs().iter().all(|(k, _)| k == "class")));
    }

    #[test]
    fn sequences_round_trip_through_json(
        steps in proptest::collection::vec("[a-z/\\[\\]@'=. ]{0,24}", 0..5),
        seed_page in "[0-9]{4}",
    ) {
        let seq = ActionSequence::new(steps, Provenance { seed_page, strategy: Strategy::Reflexion });
        let text = serde_json::to_string(&seq).unwrap();
        prop_assert_eq!(serde_json::from_str::<ActionSequence>(&text).unwrap(), seq);
    }
}
