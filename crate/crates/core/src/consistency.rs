//! Sign-vector predictions over a label graph and the local/global
//! consistency checks used to detect attacks.
//!
//! Two rules are evaluated, both only constraining ON (+1) nodes:
//!
//! * [`Rule::NoOnChild`] — an ON node with children must have at least one ON
//!   child. Always enabled.
//! * [`Rule::NoOnParent`] — an ON node with parents must have at least one ON
//!   parent. Enabled by default, can be switched off via [`RuleConfig`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{LabelGraph, LabelId};

/// Per-label sign vector in {-1, +1}: +1 means the label is predicted
/// present ("ON"), -1 absent ("OFF").
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelState {
    signs: Vec<i8>,
}

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("sign entries must be -1 or +1, found {0} at position {1}")]
    InvalidSign(i8, usize),
    #[error("state has {got} entries but the graph has {expected} labels")]
    LengthMismatch { expected: usize, got: usize },
}

impl LabelState {
    pub fn new(signs: Vec<i8>) -> Result<Self, StateError> {
        for (i, &s) in signs.iter().enumerate() {
            if s != 1 && s != -1 {
                return Err(StateError::InvalidSign(s, i));
            }
        }
        Ok(Self { signs })
    }

    pub fn all_off(len: usize) -> Self {
        Self {
            signs: vec![-1; len],
        }
    }

    pub fn all_on(len: usize) -> Self {
        Self { signs: vec![1; len] }
    }

    pub fn from_on_set(len: usize, on: &[LabelId]) -> Self {
        let mut signs = vec![-1; len];
        for n in on {
            signs[n.index()] = 1;
        }
        Self { signs }
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn sign(&self, n: LabelId) -> i8 {
        self.signs[n.index()]
    }

    pub fn is_on(&self, n: LabelId) -> bool {
        self.signs[n.index()] == 1
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn on_ids(&self) -> Vec<LabelId> {
        self.signs
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 1)
            .map(|(i, _)| LabelId(i as u32))
            .collect()
    }

    pub(crate) fn flip(&mut self, n: LabelId) {
        self.signs[n.index()] = -self.signs[n.index()];
    }

    pub(crate) fn check_len(&self, g: &LabelGraph) -> Result<(), StateError> {
        if self.signs.len() == g.node_count() {
            Ok(())
        } else {
            Err(StateError::LengthMismatch {
                expected: g.node_count(),
                got: self.signs.len(),
            })
        }
    }
}

/// Which consistency rule a node violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    NoOnChild,
    NoOnParent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub node: LabelId,
    pub rule: Rule,
}

/// Enables/disables the upward (`NoOnParent`) rule. The downward rule is
/// always checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub upward: bool,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self { upward: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub violations: Vec<Violation>,
}

impl ConsistencyReport {
    pub fn consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Rule violations at a single node, in rule order.
pub fn node_consistent(
    g: &LabelGraph,
    s: &LabelState,
    n: LabelId,
    rules: RuleConfig,
) -> Result<Vec<Rule>, StateError> {
    s.check_len(g)?;
    Ok(node_violations(g, s, n, rules))
}

fn node_violations(g: &LabelGraph, s: &LabelState, n: LabelId, rules: RuleConfig) -> Vec<Rule> {
    let mut out = Vec::new();
    if s.is_on(n) {
        let children = g.children(n);
        if !children.is_empty() && children.iter().all(|&c| !s.is_on(c)) {
            out.push(Rule::NoOnChild);
        }
        if rules.upward {
            let parents = g.parents(n);
            if !parents.is_empty() && parents.iter().all(|&p| !s.is_on(p)) {
                out.push(Rule::NoOnParent);
            }
        }
    }
    out
}

/// Checks every node within undirected hop distance `radius` of `center`
/// (including the center itself). Each node is evaluated against its full
/// parent/child neighborhood; the radius only bounds which nodes are checked.
pub fn check_local(
    g: &LabelGraph,
    s: &LabelState,
    center: LabelId,
    radius: usize,
    rules: RuleConfig,
) -> Result<ConsistencyReport, StateError> {
    s.check_len(g)?;
    let mut frontier = vec![center];
    let mut seen = vec![false; g.node_count()];
    seen[center.index()] = true;
    let mut nodes = vec![center];
    for _ in 0..radius {
        let mut next = Vec::new();
        for &v in &frontier {
            for &u in g.children(v).iter().chain(g.parents(v)) {
                if !seen[u.index()] {
                    seen[u.index()] = true;
                    next.push(u);
                    nodes.push(u);
                }
            }
        }
        frontier = next;
    }
    nodes.sort_unstable();
    Ok(report_for(g, s, nodes.into_iter(), rules))
}

/// Checks every node of the graph.
pub fn check_global(
    g: &LabelGraph,
    s: &LabelState,
    rules: RuleConfig,
) -> Result<ConsistencyReport, StateError> {
    s.check_len(g)?;
    Ok(report_for(g, s, g.ids(), rules))
}

fn report_for(
    g: &LabelGraph,
    s: &LabelState,
    nodes: impl Iterator<Item = LabelId>,
    rules: RuleConfig,
) -> ConsistencyReport {
    let mut violations = Vec::new();
    for n in nodes {
        for rule in node_violations(g, s, n, rules) {
            violations.push(Violation { node: n, rule });
        }
    }
    ConsistencyReport { violations }
}
