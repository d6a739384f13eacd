mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use support::{origin_path, random_tree, random_xpath, Oracle, OracleNode};
use wrapsmith_core::dom::measure;
use wrapsmith_core::exec::{eval_node, eval_text, ExtractionStatus, NodeSelectError};
use wrapsmith_core::xpath::{Value, XPath};

#[test]
fn eval_text_agrees_with_reference_engine() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut compared = 0;
    let mut non_empty = 0;
    for t in 0..100 {
        let tree = random_tree(&mut rng, &format!("t{t}"));
        let oracle = Oracle::new(&tree);
        for _ in 0..10 {
            let xp = random_xpath(&mut rng);
            let ours = eval_text(&tree, &xp);
            let theirs = oracle
                .text(&xp)
                .unwrap_or_else(|| panic!("oracle rejected {xp}"));
            match ours.status {
                ExtractionStatus::NoMatch => assert_eq!(oracle.matched(&xp), Some(0), "{xp}"),
                ExtractionStatus::Ok => {
                    assert_eq!(ours.values, theirs, "{xp} on {tree:?}");
                    non_empty += usize::from(!theirs.is_empty());
                }
                ExtractionStatus::InvalidXpath => panic!("{xp} rejected: {:?}", ours.message),
            }
            compared += 1;
        }
    }
    assert_eq!(compared, 1000);
    eprintln!("{non_empty} of {compared} selections produced values");
    assert!(non_empty >= 300, "generator too sparse: {non_empty}");
}

#[test]
fn eval_node_agrees_with_reference_engine() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for t in 0..100 {
        let tree = random_tree(&mut rng, &format!("t{t}"));
        let oracle = Oracle::new(&tree);
        for _ in 0..10 {
            let xp = random_xpath(&mut rng);
            let expected = oracle.first_node(&xp).expect("oracle accepts");
            match (eval_node(&tree, &xp), expected) {
                (Ok(sub), Some(OracleNode::Element(path))) => {
                    assert_eq!(origin_path(&tree, &sub), path, "{xp}")
                }
                (Err(NodeSelectError::NoMatch), None) => {}
                (Err(NodeSelectError::RootReached), Some(OracleNode::Root)) => {}
                (Err(NodeSelectError::NotAnElement), Some(OracleNode::Other)) => {}
                (ours, theirs) => panic!("{xp}: ours {ours:?}, reference {theirs:?}"),
            }
        }
    }
}

#[test]
fn parent_step_selects_parent_of_match() {
    // Holds exactly when `x` selects a single node; with several matches
    // `x/..` is the first of all their parents.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut checked = 0;
    for t in 0..400 {
        let tree = random_tree(&mut rng, &format!("t{t}"));
        let xp = random_xpath(&mut rng);
        let single = matches!(
            XPath::parse(&xp).unwrap().evaluate(&tree).unwrap(),
            Value::Nodes(ref n) if n.len() == 1
        );
        if !single {
            continue;
        }
        let Ok(sub) = eval_node(&tree, &xp) else {
            continue;
        };
        let origin = sub.root().origin();
        let node = tree.nodes().find(|n| n.origin() == origin).unwrap();
        match (node.parent(), eval_node(&tree, &format!("{xp}/.."))) {
            (Some(parent), Ok(up)) => assert_eq!(up.root().origin(), parent.origin(), "{xp}"),
            (None, Err(NodeSelectError::RootReached)) => {}
            (p, up) => panic!("{xp}: parent {p:?}, /.. gave {up:?}"),
        }
        checked += 1;
    }
    assert!(checked > 30, "only {checked} cases exercised");
}

#[test]
fn pruning_never_grows_the_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in 0..200 {
        let tree = random_tree(&mut rng, &format!("t{t}"));
        let xp = random_xpath(&mut rng);
        if let Ok(sub) = eval_node(&tree, &xp) {
            assert!(sub.origin_set().is_subset(&tree.origin_set()));
            let (a, b) = (measure(&tree), measure(&sub));
            assert!(
                b.token_count <= a.token_count && b.height <= a.height,
                "{xp}"
            );
        }
    }
}
