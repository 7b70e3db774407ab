//! Label taxonomy graph: construction, validation, depth/ancestry queries,
//! WUP similarity and single-parent tree-ification, plus the JSON file
//! formats for graphs and parent-candidate lists.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Dense index of a label inside one [`LabelGraph`]. Ids are assigned by
/// input order at build time and are not stable across graphs.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct LabelId(pub u32);

impl LabelId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("cycle detected: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("unknown label name: {0:?}")]
    UnknownLabelName(String),
    #[error("duplicate edge {parent:?} -> {child:?}")]
    DuplicateEdge { parent: String, child: String },
    #[error("duplicate label name: {0:?}")]
    DuplicateLabelName(String),
    #[error("graph must contain at least one label")]
    EmptyGraph,
    #[error("labels {a:?} and {b:?} have no common ancestor")]
    NoCommonAncestor { a: String, b: String },
    #[error("candidate list for {child:?} is empty")]
    EmptyCandidateParents { child: String },
    #[error("label id {0} out of range (|C| = {1})")]
    IdOutOfRange(u32, usize),
}

/// One child with the taxonomy parents proposed for it. Tree-ification keeps
/// the single parent with maximal WUP similarity to the child.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaxonomyCandidate {
    pub child: String,
    pub parents: Vec<String>,
}

/// Immutable directed acyclic graph over labels. Parent adjacency is the
/// exact transpose of child adjacency; both are kept sorted by id so every
/// traversal in the crate is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGraph {
    names: Vec<String>,
    name_to_id: HashMap<String, LabelId>,
    children: Vec<Vec<LabelId>>,
    parents: Vec<Vec<LabelId>>,
    original: Vec<bool>,
    depths: Vec<u32>,
}

impl LabelGraph {
    /// Builds and validates a graph from label names and (parent, child)
    /// name pairs. All nodes are flagged as original dataset labels.
    pub fn build<S: AsRef<str>>(names: &[S], edges: &[(S, S)]) -> Result<Self, GraphError> {
        let originals: Vec<String> = names.iter().map(|n| n.as_ref().to_string()).collect();
        Self::build_with_original(names, edges, &originals)
    }

    /// As [`LabelGraph::build`], with an explicit list of names to flag as
    /// original; everything else is an abstract label added from a taxonomy.
    pub fn build_with_original<S: AsRef<str>>(
        names: &[S],
        edges: &[(S, S)],
        original: &[String],
    ) -> Result<Self, GraphError> {
        if names.is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        let mut name_to_id = HashMap::with_capacity(names.len());
        let mut owned_names = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let name = name.as_ref().to_string();
            if name_to_id
                .insert(name.clone(), LabelId(i as u32))
                .is_some()
            {
                return Err(GraphError::DuplicateLabelName(name));
            }
            owned_names.push(name);
        }

        let n = owned_names.len();
        let mut children: Vec<Vec<LabelId>> = vec![Vec::new(); n];
        let mut parents: Vec<Vec<LabelId>> = vec![Vec::new(); n];
        let mut seen_edges = HashSet::new();
        for (parent, child) in edges {
            let p = *name_to_id
                .get(parent.as_ref())
                .ok_or_else(|| GraphError::UnknownLabelName(parent.as_ref().to_string()))?;
            let c = *name_to_id
                .get(child.as_ref())
                .ok_or_else(|| GraphError::UnknownLabelName(child.as_ref().to_string()))?;
            if p == c {
                return Err(GraphError::CycleDetected(vec![
                    parent.as_ref().to_string(),
                    child.as_ref().to_string(),
                ]));
            }
            if !seen_edges.insert((p, c)) {
                return Err(GraphError::DuplicateEdge {
                    parent: parent.as_ref().to_string(),
                    child: child.as_ref().to_string(),
                });
            }
            children[p.index()].push(c);
            parents[c.index()].push(p);
        }
        for adj in children.iter_mut().chain(parents.iter_mut()) {
            adj.sort_unstable();
        }

        let mut flags = vec![false; n];
        for name in original {
            let id = *name_to_id
                .get(name.as_str())
                .ok_or_else(|| GraphError::UnknownLabelName(name.clone()))?;
            flags[id.index()] = true;
        }

        let topo = topological_order(&children, &parents, &owned_names)?;
        let depths = compute_depths(&topo, &parents);

        Ok(Self {
            names: owned_names,
            name_to_id,
            children,
            parents,
            original: flags,
            depths,
        })
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, n: LabelId) -> &str {
        &self.names[n.index()]
    }

    pub fn id_of(&self, name: &str) -> Result<LabelId, GraphError> {
        self.name_to_id
            .get(name)
            .copied()
            .ok_or_else(|| GraphError::UnknownLabelName(name.to_string()))
    }

    pub fn contains(&self, n: LabelId) -> bool {
        n.index() < self.names.len()
    }

    fn check_id(&self, n: LabelId) -> Result<(), GraphError> {
        if self.contains(n) {
            Ok(())
        } else {
            Err(GraphError::IdOutOfRange(n.0, self.node_count()))
        }
    }

    pub fn children(&self, n: LabelId) -> &[LabelId] {
        &self.children[n.index()]
    }

    pub fn parents(&self, n: LabelId) -> &[LabelId] {
        &self.parents[n.index()]
    }

    pub fn is_original(&self, n: LabelId) -> bool {
        self.original[n.index()]
    }

    pub fn original_mask(&self) -> &[bool] {
        &self.original
    }

    pub fn ids(&self) -> impl Iterator<Item = LabelId> + '_ {
        (0..self.names.len() as u32).map(LabelId)
    }

    /// All (parent, child) edges, sorted by (parent, child) id.
    pub fn edges(&self) -> Vec<(LabelId, LabelId)> {
        let mut out = Vec::new();
        for p in self.ids() {
            for &c in self.children(p) {
                out.push((p, c));
            }
        }
        out
    }

    /// Nodes without parents, ascending.
    pub fn roots(&self) -> Vec<LabelId> {
        self.ids().filter(|&n| self.parents(n).is_empty()).collect()
    }

    /// Nodes without children, ascending.
    pub fn leaves(&self) -> Vec<LabelId> {
        self.ids().filter(|&n| self.children(n).is_empty()).collect()
    }

    /// 1 plus the number of edges on the longest root-to-`n` path; roots sit
    /// at depth 1.
    pub fn depth(&self, n: LabelId) -> Result<u32, GraphError> {
        self.check_id(n)?;
        Ok(self.depths[n.index()])
    }

    /// Strict ancestors of `n` (excluding `n`), ascending.
    pub fn ancestors(&self, n: LabelId) -> Result<Vec<LabelId>, GraphError> {
        self.check_id(n)?;
        let mut set = self.reach(n, |g, v| g.parents(v));
        set.remove(&n);
        let mut out: Vec<LabelId> = set.into_iter().collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Strict descendants of `n` (excluding `n`), ascending.
    pub fn descendants(&self, n: LabelId) -> Result<Vec<LabelId>, GraphError> {
        self.check_id(n)?;
        let mut set = self.reach(n, |g, v| g.children(v));
        set.remove(&n);
        let mut out: Vec<LabelId> = set.into_iter().collect();
        out.sort_unstable();
        Ok(out)
    }

    fn reach<'a, F>(&'a self, start: LabelId, next: F) -> HashSet<LabelId>
    where
        F: Fn(&'a Self, LabelId) -> &'a [LabelId],
    {
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            if seen.insert(v) {
                queue.extend(next(self, v).iter().copied());
            }
        }
        seen
    }

    /// Deepest common ancestor of `a` and `b`, where each node counts as an
    /// ancestor of itself. Ties on depth break toward the smallest id.
    pub fn lowest_common_subsumer(&self, a: LabelId, b: LabelId) -> Result<LabelId, GraphError> {
        self.check_id(a)?;
        self.check_id(b)?;
        let up_a = self.reach(a, |g, v| g.parents(v));
        let up_b = self.reach(b, |g, v| g.parents(v));
        let mut best: Option<(u32, LabelId)> = None;
        for &n in &up_a {
            if !up_b.contains(&n) {
                continue;
            }
            let d = self.depths[n.index()];
            best = match best {
                None => Some((d, n)),
                Some((bd, bn)) if d > bd || (d == bd && n < bn) => Some((d, n)),
                other => other,
            };
        }
        best.map(|(_, n)| n).ok_or_else(|| GraphError::NoCommonAncestor {
            a: self.name(a).to_string(),
            b: self.name(b).to_string(),
        })
    }

    /// Wu-Palmer similarity: `2 * depth(lcs) / (depth(a) + depth(b))`.
    pub fn wup_similarity(&self, a: LabelId, b: LabelId) -> Result<f64, GraphError> {
        let lcs = self.lowest_common_subsumer(a, b)?;
        let num = 2.0 * f64::from(self.depths[lcs.index()]);
        let den = f64::from(self.depths[a.index()]) + f64::from(self.depths[b.index()]);
        Ok(num / den)
    }

    /// Reduces multi-parent candidates to a single parent per child: for each
    /// candidate the parent with maximal WUP similarity (computed in `self`)
    /// wins, ties broken by smallest id. The returned graph carries the same
    /// labels and original flags but only the selected edges, so every node
    /// has at most one parent.
    pub fn treeify(&self, candidates: &[TaxonomyCandidate]) -> Result<LabelGraph, GraphError> {
        // Merge duplicate child entries, preserving first-seen order.
        let mut merged: Vec<(LabelId, Vec<LabelId>)> = Vec::new();
        let mut child_pos: HashMap<LabelId, usize> = HashMap::new();
        for cand in candidates {
            let child = self.id_of(&cand.child)?;
            if cand.parents.is_empty() {
                return Err(GraphError::EmptyCandidateParents {
                    child: cand.child.clone(),
                });
            }
            let mut ids = Vec::with_capacity(cand.parents.len());
            for p in &cand.parents {
                ids.push(self.id_of(p)?);
            }
            match child_pos.get(&child) {
                Some(&i) => merged[i].1.extend(ids),
                None => {
                    child_pos.insert(child, merged.len());
                    merged.push((child, ids));
                }
            }
        }

        let mut edges: Vec<(String, String)> = Vec::new();
        for (child, parent_ids) in &merged {
            let mut best: Option<(f64, LabelId)> = None;
            for &p in parent_ids {
                let sim = self.wup_similarity(*child, p)?;
                best = match best {
                    None => Some((sim, p)),
                    Some((bs, bp)) if sim > bs || (sim == bs && p < bp) => Some((sim, p)),
                    other => other,
                };
            }
            let (_, parent) = best.expect("candidate parents are non-empty");
            edges.push((self.name(parent).to_string(), self.name(*child).to_string()));
        }

        let originals: Vec<String> = self
            .ids()
            .filter(|&n| self.is_original(n))
            .map(|n| self.name(n).to_string())
            .collect();
        let names: Vec<String> = self.names.clone();
        let edge_refs: Vec<(String, String)> = edges;
        LabelGraph::build_with_original(&names, &edge_refs, &originals)
    }

    /// Canonical content hash of the graph (labels, edges, original flags).
    pub fn content_hash(&self) -> String {
        let file = GraphFile::from_graph(self);
        let bytes = serde_json::to_vec(&file).expect("graph file serialization cannot fail");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GraphFile::from_graph(self))
            .expect("graph file serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphFileError> {
        let file: GraphFile = serde_json::from_str(text)?;
        Ok(file.into_graph()?)
    }
}

fn topological_order(
    children: &[Vec<LabelId>],
    parents: &[Vec<LabelId>],
    names: &[String],
) -> Result<Vec<LabelId>, GraphError> {
    let n = children.len();
    let mut indegree: Vec<usize> = parents.iter().map(|p| p.len()).collect();
    let mut queue: VecDeque<LabelId> = (0..n as u32)
        .map(LabelId)
        .filter(|id| indegree[id.index()] == 0)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &c in &children[v.index()] {
            indegree[c.index()] -= 1;
            if indegree[c.index()] == 0 {
                queue.push_back(c);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // Leftover nodes all lie on or feed into a cycle; walk parents inside the
    // leftover set until a node repeats, then report that loop.
    let leftover: HashSet<LabelId> = (0..n as u32)
        .map(LabelId)
        .filter(|id| indegree[id.index()] > 0)
        .collect();
    let start = *leftover.iter().min().expect("leftover set is non-empty");
    let mut path = vec![start];
    let mut seen_at: HashMap<LabelId, usize> = HashMap::from([(start, 0)]);
    let mut cur = start;
    loop {
        let next = parents[cur.index()]
            .iter()
            .copied()
            .find(|p| leftover.contains(p))
            .expect("every leftover node has a leftover parent");
        if let Some(&i) = seen_at.get(&next) {
            // `path[i..]` is in child-to-parent order; reversing it yields the
            // cycle's edges parent-to-child, closed by prepending `next`.
            let mut cycle = vec![names[next.index()].clone()];
            cycle.extend(path[i..].iter().rev().map(|id| names[id.index()].clone()));
            return Err(GraphError::CycleDetected(cycle));
        }
        seen_at.insert(next, path.len());
        path.push(next);
        cur = next;
    }
}

fn compute_depths(topo: &[LabelId], parents: &[Vec<LabelId>]) -> Vec<u32> {
    let mut depths = vec![0u32; parents.len()];
    for &v in topo {
        let d = parents[v.index()]
            .iter()
            .map(|p| depths[p.index()])
            .max()
            .unwrap_or(0);
        depths[v.index()] = d + 1;
    }
    depths
}

#[derive(Debug, Error)]
pub enum GraphFileError {
    #[error("invalid graph file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// On-disk form of a graph: `{"labels": [...], "edges": [[parent, child],
/// ...], "original": [...]}`. Names are authoritative; ids are derived from
/// label order and never persisted. `original` may be omitted when every
/// label is an original dataset label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub labels: Vec<String>,
    pub edges: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<Vec<String>>,
}

impl GraphFile {
    pub fn from_graph(g: &LabelGraph) -> Self {
        let edges = g
            .edges()
            .into_iter()
            .map(|(p, c)| (g.name(p).to_string(), g.name(c).to_string()))
            .collect();
        let original: Vec<String> = g
            .ids()
            .filter(|&n| g.is_original(n))
            .map(|n| g.name(n).to_string())
            .collect();
        let original = if original.len() == g.node_count() {
            None
        } else {
            Some(original)
        };
        Self {
            labels: g.names().to_vec(),
            edges,
            original,
        }
    }

    pub fn into_graph(self) -> Result<LabelGraph, GraphError> {
        let edges: Vec<(&str, &str)> = self
            .edges
            .iter()
            .map(|(p, c)| (p.as_str(), c.as_str()))
            .collect();
        let names: Vec<&str> = self.labels.iter().map(|s| s.as_str()).collect();
        match &self.original {
            Some(orig) => LabelGraph::build_with_original(&names, &edges, orig),
            None => LabelGraph::build(&names, &edges),
        }
    }
}

/// On-disk form of a parent-candidate list:
/// `[{"child": ..., "parents": [...]}, ...]`.
pub fn candidates_from_json(text: &str) -> Result<Vec<TaxonomyCandidate>, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn candidates_to_json(candidates: &[TaxonomyCandidate]) -> String {
    serde_json::to_string_pretty(candidates).expect("candidate serialization cannot fail")
}
