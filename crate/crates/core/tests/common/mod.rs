//! Shared generators for the randomized suites: small random DAGs/trees,
//! uniformly sampled consistent states, and random turn-off target picks.
#![allow(dead_code)] // each test binary uses its own subset

use mlakit::consistency::LabelState;
use mlakit::expansion::TargetSet;
use mlakit::hierarchy::{LabelGraph, LabelId};
use mlakit::oracle::exhaustive_consistency;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random DAG with 2..=max_nodes nodes; edges only run from lower to higher
/// index, so acyclicity holds by construction.
pub fn random_dag(rng: &mut ChaCha8Rng, max_nodes: usize) -> LabelGraph {
    let n = rng.random_range(2..=max_nodes);
    let p = rng.random_range(0.15..0.5);
    let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((names[i].clone(), names[j].clone()));
            }
        }
    }
    LabelGraph::build(&names, &edges).expect("generated DAG is valid")
}

/// Random rooted tree: every node after the first picks one earlier parent.
pub fn random_tree(rng: &mut ChaCha8Rng, max_nodes: usize) -> LabelGraph {
    let n = rng.random_range(2..=max_nodes);
    let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let mut edges = Vec::new();
    for j in 1..n {
        let parent = rng.random_range(0..j);
        edges.push((names[parent].clone(), names[j].clone()));
    }
    LabelGraph::build(&names, &edges).expect("generated tree is valid")
}

/// Uniform draw from all globally consistent states (both rules) that have at
/// least one ON label. None if the graph admits no such state.
pub fn random_consistent_state(rng: &mut ChaCha8Rng, g: &LabelGraph) -> Option<LabelState> {
    let n = g.node_count();
    assert!(n <= 16, "state enumeration is exponential");
    let mut candidates = Vec::new();
    for bits in 1u32..1 << n {
        let signs: Vec<i8> = (0..n).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect();
        let s = LabelState::new(signs).unwrap();
        if exhaustive_consistency(g, &s, true).consistent() {
            candidates.push(s);
        }
    }
    if candidates.is_empty() {
        return None;
    }
    let i = rng.random_range(0..candidates.len());
    Some(candidates.swap_remove(i))
}

/// 1..=max_k distinct ON nodes, turn-off direction.
pub fn random_turn_off_targets(
    rng: &mut ChaCha8Rng,
    s: &LabelState,
    max_k: usize,
) -> Option<TargetSet> {
    let mut on: Vec<LabelId> = s.on_ids();
    if on.is_empty() {
        return None;
    }
    let k = rng.random_range(1..=max_k.min(on.len()));
    for i in 0..k {
        let j = rng.random_range(i..on.len());
        on.swap(i, j);
    }
    on.truncate(k);
    Some(TargetSet::turn_off(&on).unwrap())
}
