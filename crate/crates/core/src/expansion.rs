//! Expansion of an attack target set into the full set of label flips the
//! taxonomy forces, so that the post-attack prediction stays consistent.
//!
//! For a turn-off target the cascade walks down over ON children and up over
//! ON parents: a visited ON node is flipped OFF exactly when it has no ON
//! supporter left outside the flip set (no ON parent for the downward walk,
//! no ON child for the upward walk). Targets are processed in input order and
//! share one flip set, which is seeded with the targets themselves. After all
//! passes the simulated post-flip state is verified globally and repaired to
//! a fixpoint; the repair loop is bounded by the label count.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::{check_global, LabelState, Rule, RuleConfig, StateError};
use crate::hierarchy::{LabelGraph, LabelId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipDirection {
    TurnOff,
    TurnOn,
}

impl FlipDirection {
    /// The sign a label must currently have for this direction to apply.
    pub fn required_sign(self) -> i8 {
        match self {
            FlipDirection::TurnOff => 1,
            FlipDirection::TurnOn => -1,
        }
    }
}

/// How an entry ended up in the expanded set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Target,
    ChildCascade,
    ParentCascade,
}

#[derive(Debug, Error, PartialEq)]
pub enum ExpansionError {
    #[error("target {node} has direction {direction:?} but current sign {sign}")]
    DirectionMismatch {
        node: String,
        direction: FlipDirection,
        sign: i8,
    },
    #[error("duplicate target node {0}")]
    DuplicateTarget(String),
    #[error("target set is empty")]
    EmptyTargetSet,
    #[error("expansion did not converge within {0} repair rounds")]
    NonConvergence(usize),
    #[error(transparent)]
    State(#[from] StateError),
}

/// The labels an attack intends to flip, with per-label direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSet {
    entries: Vec<(LabelId, FlipDirection)>,
}

impl TargetSet {
    pub fn new(entries: Vec<(LabelId, FlipDirection)>) -> Result<Self, ExpansionError> {
        if entries.is_empty() {
            return Err(ExpansionError::EmptyTargetSet);
        }
        for (i, (n, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(m, _)| m == n) {
                return Err(ExpansionError::DuplicateTarget(n.to_string()));
            }
        }
        Ok(Self { entries })
    }

    /// Turn-off targets, the common case.
    pub fn turn_off(nodes: &[LabelId]) -> Result<Self, ExpansionError> {
        Self::new(nodes.iter().map(|&n| (n, FlipDirection::TurnOff)).collect())
    }

    pub fn entries(&self) -> &[(LabelId, FlipDirection)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, n: LabelId) -> bool {
        self.entries.iter().any(|(m, _)| *m == n)
    }

    pub fn nodes(&self) -> Vec<LabelId> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    /// Validates that every entry's direction matches the current sign.
    pub fn check_against(&self, g: &LabelGraph, s: &LabelState) -> Result<(), ExpansionError> {
        s.check_len(g)?;
        for &(n, dir) in &self.entries {
            if s.sign(n) != dir.required_sign() {
                return Err(ExpansionError::DirectionMismatch {
                    node: g.name(n).to_string(),
                    direction: dir,
                    sign: s.sign(n),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedEntry {
    pub node: LabelId,
    pub direction: FlipDirection,
    pub provenance: Provenance,
}

/// The target set plus every cascaded flip, in the order the flips were
/// decided. Flipping exactly these entries on the input state yields a
/// globally consistent state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ExpandedTargetSet {
    entries: Vec<ExpandedEntry>,
}

impl ExpandedTargetSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<ExpandedEntry>) -> Result<Self, ExpansionError> {
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|d| d.node == e.node) {
                return Err(ExpansionError::DuplicateTarget(e.node.to_string()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ExpandedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, n: LabelId) -> bool {
        self.entries.iter().any(|e| e.node == n)
    }

    pub fn nodes(&self) -> Vec<LabelId> {
        self.entries.iter().map(|e| e.node).collect()
    }
}

/// Work-in-progress flip set with O(1) membership.
struct FlipSet {
    entries: Vec<ExpandedEntry>,
    member: Vec<bool>,
}

impl FlipSet {
    fn new(n: usize) -> Self {
        Self {
            entries: Vec::new(),
            member: vec![false; n],
        }
    }

    fn contains(&self, n: LabelId) -> bool {
        self.member[n.index()]
    }

    fn push(&mut self, node: LabelId, direction: FlipDirection, provenance: Provenance) -> bool {
        if self.member[node.index()] {
            return false;
        }
        self.member[node.index()] = true;
        self.entries.push(ExpandedEntry {
            node,
            direction,
            provenance,
        });
        true
    }

    fn direction_of(&self, n: LabelId) -> Option<FlipDirection> {
        if !self.member[n.index()] {
            return None;
        }
        self.entries
            .iter()
            .find(|e| e.node == n)
            .map(|e| e.direction)
    }
}

enum Walk {
    Down,
    Up,
}

/// Computes the expanded target set for `omega` on state `s`.
///
/// An inconsistent input state is tolerated (a warning is logged); the
/// pre-existing violations are repaired along the way where the cascade
/// reaches them, so the post-flip state is still checked globally.
pub fn expand(
    g: &LabelGraph,
    s: &LabelState,
    omega: &TargetSet,
) -> Result<ExpandedTargetSet, ExpansionError> {
    omega.check_against(g, s)?;
    let rules = RuleConfig { upward: true };
    if !check_global(g, s, rules)?.consistent() {
        log::warn!("expanding targets on a globally inconsistent input state");
    }

    let mut flips = FlipSet::new(g.node_count());
    for &(n, dir) in omega.entries() {
        flips.push(n, dir, Provenance::Target);
    }
    for &(n, dir) in omega.entries() {
        match dir {
            FlipDirection::TurnOff => {
                let mut visited = vec![false; g.node_count()];
                visited[n.index()] = true;
                cascade_off(g, s, &mut flips, &mut visited, n, Walk::Down);
                cascade_off(g, s, &mut flips, &mut visited, n, Walk::Up);
            }
            FlipDirection::TurnOn => {
                turn_on_ancestors(g, s, &mut flips, n);
                turn_on_child_chain(g, s, &mut flips, n);
            }
        }
    }

    // Verify-and-repair to a fixpoint. Every productive round adds at least
    // one entry, so node_count rounds are always enough.
    let max_rounds = g.node_count();
    for _ in 0..=max_rounds {
        let post = apply_flips(s, &flips);
        let report = check_global(g, &post, rules)?;
        let Some(violation) = report.violations.first() else {
            return Ok(ExpandedTargetSet {
                entries: flips.entries,
            });
        };
        let before = flips.entries.len();
        let v = violation.node;
        match flips.direction_of(v) {
            Some(FlipDirection::TurnOn) => match violation.rule {
                Rule::NoOnChild => turn_on_child_chain(g, s, &mut flips, v),
                Rule::NoOnParent => turn_on_ancestors(g, s, &mut flips, v),
            },
            Some(FlipDirection::TurnOff) => {
                // An effectively-OFF node cannot violate either rule; if we
                // get here the input state itself was broken beyond repair.
            }
            None => {
                // A kept ON node lost its support through the cascade.
                let tag = match violation.rule {
                    Rule::NoOnChild => Provenance::ParentCascade,
                    Rule::NoOnParent => Provenance::ChildCascade,
                };
                flips.push(v, FlipDirection::TurnOff, tag);
                let mut visited = vec![false; g.node_count()];
                visited[v.index()] = true;
                cascade_off(g, s, &mut flips, &mut visited, v, Walk::Down);
                cascade_off(g, s, &mut flips, &mut visited, v, Walk::Up);
            }
        }
        if flips.entries.len() == before {
            return Err(ExpansionError::NonConvergence(max_rounds));
        }
    }
    Err(ExpansionError::NonConvergence(max_rounds))
}

/// BFS from `start` over ON nodes in the walk direction. A visited ON node
/// flips OFF iff it has no ON supporter outside the flip set; only flipped
/// (or already-flipped) nodes propagate the walk further.
fn cascade_off(
    g: &LabelGraph,
    s: &LabelState,
    flips: &mut FlipSet,
    visited: &mut [bool],
    start: LabelId,
    walk: Walk,
) {
    type Adjacency = fn(&LabelGraph, LabelId) -> &[LabelId];
    let (forward, support, tag): (Adjacency, Adjacency, Provenance) = match walk {
        Walk::Down => (
            |g, n| g.children(n),
            |g, n| g.parents(n),
            Provenance::ChildCascade,
        ),
        Walk::Up => (
            |g, n| g.parents(n),
            |g, n| g.children(n),
            Provenance::ParentCascade,
        ),
    };

    let mut queue: VecDeque<LabelId> = forward(g, start)
        .iter()
        .copied()
        .filter(|&v| s.is_on(v))
        .collect();
    while let Some(v) = queue.pop_front() {
        if visited[v.index()] {
            continue;
        }
        visited[v.index()] = true;
        if !flips.contains(v) {
            let supported = support(g, v)
                .iter()
                .any(|&u| s.is_on(u) && !flips.contains(u));
            if supported {
                continue;
            }
            flips.push(v, FlipDirection::TurnOff, tag);
        }
        queue.extend(forward(g, v).iter().copied().filter(|&u| s.is_on(u)));
    }
}

/// Effective sign of `n` once the current flip set is applied.
fn effectively_on(s: &LabelState, flips: &FlipSet, n: LabelId) -> bool {
    s.is_on(n) ^ flips.contains(n)
}

/// Turn-on support, upward half: every effectively-OFF ancestor of `n` is
/// flipped ON, so the target has an ON path to a root.
fn turn_on_ancestors(g: &LabelGraph, s: &LabelState, flips: &mut FlipSet, n: LabelId) {
    let mut seen = vec![false; g.node_count()];
    seen[n.index()] = true;
    let mut queue: VecDeque<LabelId> = g.parents(n).iter().copied().collect();
    while let Some(v) = queue.pop_front() {
        if seen[v.index()] {
            continue;
        }
        seen[v.index()] = true;
        if !effectively_on(s, flips, v) {
            flips.push(v, FlipDirection::TurnOn, Provenance::ParentCascade);
        }
        queue.extend(g.parents(v).iter().copied());
    }
}

/// Turn-on support, downward half: if `n` is internal and all its children
/// are effectively OFF, flip ON the shortest chain of OFF descendants ending
/// at a leaf or at a node that already has an effectively-ON child. Ties
/// break toward smaller ids via BFS order.
fn turn_on_child_chain(g: &LabelGraph, s: &LabelState, flips: &mut FlipSet, n: LabelId) {
    let children = g.children(n);
    if children.is_empty() || children.iter().any(|&c| effectively_on(s, flips, c)) {
        return;
    }
    let mut parent_of: Vec<Option<LabelId>> = vec![None; g.node_count()];
    let mut seen = vec![false; g.node_count()];
    seen[n.index()] = true;
    let mut queue: VecDeque<LabelId> = VecDeque::new();
    for &c in children {
        if !flips.contains(c) {
            seen[c.index()] = true;
            parent_of[c.index()] = Some(n);
            queue.push_back(c);
        }
    }
    while let Some(v) = queue.pop_front() {
        let v_children = g.children(v);
        let terminal =
            v_children.is_empty() || v_children.iter().any(|&c| effectively_on(s, flips, c));
        if terminal {
            // Reconstruct the chain back up to (but excluding) n.
            let mut chain = vec![v];
            let mut cur = v;
            while let Some(p) = parent_of[cur.index()] {
                if p == n {
                    break;
                }
                chain.push(p);
                cur = p;
            }
            for node in chain.into_iter().rev() {
                flips.push(node, FlipDirection::TurnOn, Provenance::ChildCascade);
            }
            return;
        }
        for &c in v_children {
            if !seen[c.index()] && !flips.contains(c) && !effectively_on(s, flips, c) {
                seen[c.index()] = true;
                parent_of[c.index()] = Some(v);
                queue.push_back(c);
            }
        }
    }
}

fn apply_flips(s: &LabelState, flips: &FlipSet) -> LabelState {
    let mut out = s.clone();
    for e in &flips.entries {
        out.flip(e.node);
    }
    out
}

/// Returns `s` with exactly the entries of `gamma` negated; the input is
/// untouched. Applying the same `gamma` twice restores the original state.
pub fn simulate_flip(
    s: &LabelState,
    gamma: &ExpandedTargetSet,
) -> Result<LabelState, ExpansionError> {
    for e in gamma.entries() {
        let idx = e.node.index();
        if idx >= s.len() {
            return Err(ExpansionError::State(StateError::LengthMismatch {
                expected: idx + 1,
                got: s.len(),
            }));
        }
        if s.sign(e.node) != e.direction.required_sign() {
            return Err(ExpansionError::DirectionMismatch {
                node: e.node.to_string(),
                direction: e.direction,
                sign: s.sign(e.node),
            });
        }
    }
    let mut out = s.clone();
    for e in gamma.entries() {
        out.flip(e.node);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::check_global;
    use crate::hierarchy::LabelGraph;

    fn small_tree() -> LabelGraph {
        LabelGraph::build(&["R", "W", "A", "B"], &[("R", "W"), ("W", "A"), ("W", "B")]).unwrap()
    }

    fn state(signs: &[i8]) -> LabelState {
        LabelState::new(signs.to_vec()).unwrap()
    }

    fn turn_off(g: &LabelGraph, names: &[&str]) -> TargetSet {
        let nodes: Vec<LabelId> = names.iter().map(|n| g.id_of(n).unwrap()).collect();
        TargetSet::turn_off(&nodes).unwrap()
    }

    #[test]
    fn lone_leaf_target_cascades_to_root() {
        let g = small_tree();
        let s = state(&[1, 1, 1, -1]);
        let gamma = expand(&g, &s, &turn_off(&g, &["A"])).unwrap();
        let nodes: Vec<&str> = gamma.entries().iter().map(|e| g.name(e.node)).collect();
        assert_eq!(nodes, vec!["A", "W", "R"]);
        assert!(gamma
            .entries()
            .iter()
            .all(|e| e.direction == FlipDirection::TurnOff));
        assert_eq!(gamma.entries()[0].provenance, Provenance::Target);
        assert_eq!(gamma.entries()[1].provenance, Provenance::ParentCascade);
        assert_eq!(gamma.entries()[2].provenance, Provenance::ParentCascade);
        let post = simulate_flip(&s, &gamma).unwrap();
        assert!(check_global(&g, &post, RuleConfig::default())
            .unwrap()
            .consistent());
    }

    #[test]
    fn sibling_support_stops_the_cascade() {
        let g = small_tree();
        let s = LabelState::all_on(4);
        let gamma = expand(&g, &s, &turn_off(&g, &["A"])).unwrap();
        assert_eq!(gamma.nodes(), vec![g.id_of("A").unwrap()]);
    }

    #[test]
    fn second_on_parent_keeps_shared_child() {
        // P1 and P2 share child c; turning off P1 must not drag c along.
        let g = LabelGraph::build(&["P1", "P2", "c"], &[("P1", "c"), ("P2", "c")]).unwrap();
        let s = LabelState::all_on(3);
        let gamma = expand(&g, &s, &turn_off(&g, &["P1"])).unwrap();
        assert_eq!(gamma.nodes(), vec![g.id_of("P1").unwrap()]);
        let post = simulate_flip(&s, &gamma).unwrap();
        assert!(check_global(&g, &post, RuleConfig::default())
            .unwrap()
            .consistent());
    }

    #[test]
    fn internal_target_flips_its_on_subtree() {
        let g = small_tree();
        let s = LabelState::all_on(4);
        let gamma = expand(&g, &s, &turn_off(&g, &["W"])).unwrap();
        // W's children lose their only ON parent, and R its only ON child.
        let mut nodes: Vec<&str> = gamma.nodes().iter().map(|&n| g.name(n)).collect();
        nodes.sort_unstable();
        assert_eq!(nodes, vec!["A", "B", "R", "W"]);
        let post = simulate_flip(&s, &gamma).unwrap();
        assert!(check_global(&g, &post, RuleConfig::default())
            .unwrap()
            .consistent());
    }

    #[test]
    fn diamond_cascade_reaches_root_through_both_parents() {
        let g = LabelGraph::build(
            &["R", "P1", "P2", "c"],
            &[("R", "P1"), ("R", "P2"), ("P1", "c"), ("P2", "c")],
        )
        .unwrap();
        let s = LabelState::all_on(4);
        let gamma = expand(&g, &s, &turn_off(&g, &["c"])).unwrap();
        let mut nodes: Vec<&str> = gamma.nodes().iter().map(|&n| g.name(n)).collect();
        nodes.sort_unstable();
        assert_eq!(nodes, vec!["P1", "P2", "R", "c"]);
        let post = simulate_flip(&s, &gamma).unwrap();
        assert!(check_global(&g, &post, RuleConfig::default())
            .unwrap()
            .consistent());
    }

    #[test]
    fn turn_on_target_lights_ancestors() {
        let g = small_tree();
        let s = LabelState::all_off(4);
        let omega = TargetSet::new(vec![(g.id_of("A").unwrap(), FlipDirection::TurnOn)]).unwrap();
        let gamma = expand(&g, &s, &omega).unwrap();
        let mut nodes: Vec<&str> = gamma.nodes().iter().map(|&n| g.name(n)).collect();
        nodes.sort_unstable();
        assert_eq!(nodes, vec!["A", "R", "W"]);
        let post = simulate_flip(&s, &gamma).unwrap();
        assert!(check_global(&g, &post, RuleConfig::default())
            .unwrap()
            .consistent());
    }

    #[test]
    fn turn_on_internal_target_builds_child_chain() {
        // Chain R -> W -> A: turning W on needs R above and one leaf below.
        let g = LabelGraph::build(&["R", "W", "A"], &[("R", "W"), ("W", "A")]).unwrap();
        let s = LabelState::all_off(3);
        let omega = TargetSet::new(vec![(g.id_of("W").unwrap(), FlipDirection::TurnOn)]).unwrap();
        let gamma = expand(&g, &s, &omega).unwrap();
        let mut nodes: Vec<&str> = gamma.nodes().iter().map(|&n| g.name(n)).collect();
        nodes.sort_unstable();
        assert_eq!(nodes, vec!["A", "R", "W"]);
        let post = simulate_flip(&s, &gamma).unwrap();
        assert!(check_global(&g, &post, RuleConfig::default())
            .unwrap()
            .consistent());
    }

    #[test]
    fn direction_mismatch_is_rejected() {
        let g = small_tree();
        let s = LabelState::all_off(4);
        let err = expand(&g, &s, &turn_off(&g, &["A"])).unwrap_err();
        assert!(matches!(err, ExpansionError::DirectionMismatch { .. }));
    }

    #[test]
    fn simulate_flip_is_an_involution() {
        let g = small_tree();
        let s = state(&[1, 1, 1, -1]);
        let gamma = expand(&g, &s, &turn_off(&g, &["A"])).unwrap();
        let once = simulate_flip(&s, &gamma).unwrap();
        assert_ne!(once, s);
        // Flipping back needs the opposite directions.
        let back = ExpandedTargetSet::from_entries(
            gamma
                .entries()
                .iter()
                .map(|e| ExpandedEntry {
                    node: e.node,
                    direction: match e.direction {
                        FlipDirection::TurnOff => FlipDirection::TurnOn,
                        FlipDirection::TurnOn => FlipDirection::TurnOff,
                    },
                    provenance: e.provenance,
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(simulate_flip(&once, &back).unwrap(), s);
    }

    #[test]
    fn simulate_flip_single_node() {
        let s = state(&[1, 1, -1]);
        let gamma = ExpandedTargetSet::from_entries(vec![ExpandedEntry {
            node: LabelId(0),
            direction: FlipDirection::TurnOff,
            provenance: Provenance::Target,
        }])
        .unwrap();
        assert_eq!(simulate_flip(&s, &gamma).unwrap(), state(&[-1, 1, -1]));
        // Empty gamma is the identity.
        assert_eq!(
            simulate_flip(&s, &ExpandedTargetSet::empty()).unwrap(),
            s
        );
    }

    #[test]
    fn expansion_is_deterministic() {
        let g = LabelGraph::build(
            &["R", "P1", "P2", "c", "d"],
            &[("R", "P1"), ("R", "P2"), ("P1", "c"), ("P2", "c"), ("P1", "d")],
        )
        .unwrap();
        let s = LabelState::all_on(5);
        let omega = turn_off(&g, &["c", "d"]);
        let first = expand(&g, &s, &omega).unwrap();
        for _ in 0..5 {
            assert_eq!(expand(&g, &s, &omega).unwrap(), first);
        }
    }
}
