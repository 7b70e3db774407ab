//! Brute-force reference implementations used by tests, the acceptance
//! suite, and a hidden CLI subcommand. They are deliberately naive — direct
//! quantifier expansion and exhaustive enumeration under a budget — and share
//! no logic with the production modules they cross-check.

use std::time::{Duration, Instant};

use ndarray::Array1;
use thiserror::Error;

use crate::consistency::{ConsistencyReport, LabelState, Rule, StateError, Violation};
use crate::expansion::TargetSet;
use crate::hierarchy::{LabelGraph, LabelId};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("no consistent flip superset exists within the candidate pool")]
    NoSolution,
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Expansion(#[from] crate::expansion::ExpansionError),
}

/// Caps on the exhaustive enumeration.
#[derive(Debug, Clone)]
pub struct OracleBudget {
    pub max_nodes: usize,
    pub max_flip_size: Option<usize>,
    pub time_cap: Duration,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self {
            max_nodes: 12,
            max_flip_size: None,
            time_cap: Duration::from_secs(30),
        }
    }
}

/// Consistency evaluation by direct expansion of the two rules over the raw
/// edge list, one quantifier at a time.
pub fn exhaustive_consistency(g: &LabelGraph, s: &LabelState, upward: bool) -> ConsistencyReport {
    let edges = g.edges();
    let mut violations = Vec::new();
    for n in g.ids() {
        if s.signs()[n.index()] != 1 {
            continue;
        }
        let has_child = edges.iter().any(|&(p, _)| p == n);
        let has_on_child = edges.iter().any(|&(p, c)| p == n && s.signs()[c.index()] == 1);
        if has_child && !has_on_child {
            violations.push(Violation {
                node: n,
                rule: Rule::NoOnChild,
            });
        }
        if upward {
            let has_parent = edges.iter().any(|&(_, c)| c == n);
            let has_on_parent = edges.iter().any(|&(p, c)| c == n && s.signs()[p.index()] == 1);
            if has_parent && !has_on_parent {
                violations.push(Violation {
                    node: n,
                    rule: Rule::NoOnParent,
                });
            }
        }
    }
    ConsistencyReport { violations }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinFlipResult {
    /// Lexicographically smallest minimum-size flip set.
    pub flips: Vec<LabelId>,
    /// How many distinct flip sets of that size are consistent.
    pub minimum_count: usize,
}

/// Smallest-cardinality superset of the targets whose simulated flip leaves
/// the state globally consistent, found by enumerating candidate sets in
/// increasing size. Candidates are drawn from the ON labels (plus the targets
/// themselves), mirroring the turn-off cascade family the expansion explores.
pub fn brute_force_min_flip(
    g: &LabelGraph,
    s: &LabelState,
    omega: &TargetSet,
    budget: &OracleBudget,
) -> Result<MinFlipResult, OracleError> {
    if g.node_count() > budget.max_nodes {
        return Err(OracleError::BudgetExceeded(format!(
            "{} nodes exceeds max_nodes = {}",
            g.node_count(),
            budget.max_nodes
        )));
    }
    omega.check_against(g, s)?;

    let required = {
        let mut v = omega.nodes();
        v.sort_unstable();
        v
    };
    let pool: Vec<LabelId> = g
        .ids()
        .filter(|&n| s.is_on(n) && !required.contains(&n))
        .collect();
    let max_size = budget.max_flip_size.unwrap_or(g.node_count());
    let start = Instant::now();

    for extra in 0..=pool.len() {
        if required.len() + extra > max_size {
            break;
        }
        let mut best: Option<Vec<LabelId>> = None;
        let mut count = 0usize;
        for combo in Combinations::new(pool.len(), extra) {
            if start.elapsed() > budget.time_cap {
                return Err(OracleError::BudgetExceeded(format!(
                    "time cap {:?} hit at size {}",
                    budget.time_cap,
                    required.len() + extra
                )));
            }
            let mut flips = required.clone();
            flips.extend(combo.iter().map(|&i| pool[i]));
            flips.sort_unstable();
            let mut signs = s.signs().to_vec();
            for n in &flips {
                signs[n.index()] = -signs[n.index()];
            }
            let post = LabelState::new(signs).expect("negated signs stay +-1");
            if exhaustive_consistency(g, &post, true).consistent() {
                count += 1;
                if best.is_none() {
                    best = Some(flips);
                }
            }
        }
        if let Some(flips) = best {
            return Ok(MinFlipResult {
                flips,
                minimum_count: count,
            });
        }
    }
    Err(OracleError::NoSolution)
}

/// Lexicographic k-combinations of 0..n as index vectors.
struct Combinations {
    n: usize,
    indices: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            indices: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let current = self.indices.clone();
        let k = self.indices.len();
        if k == 0 {
            self.done = true;
            return Some(current);
        }
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.indices[i] < self.n - (k - i) {
                self.indices[i] += 1;
                for j in i + 1..k {
                    self.indices[j] = self.indices[j - 1] + 1;
                }
                break;
            }
        }
        Some(current)
    }
}

/// Central finite differences of `f` at `x`, one coordinate at a time.
pub fn finite_difference_gradient<F>(f: F, x: &Array1<f64>, h: f64) -> Result<Array1<f64>, OracleError>
where
    F: Fn(&Array1<f64>) -> f64,
{
    if h <= 0.0 {
        return Err(OracleError::InvalidStep(h));
    }
    let mut grad = Array1::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::{check_global, RuleConfig};
    use crate::hierarchy::LabelGraph;
    use ndarray::array;

    fn small_tree() -> LabelGraph {
        LabelGraph::build(&["R", "W", "A", "B"], &[("R", "W"), ("W", "A"), ("W", "B")]).unwrap()
    }

    #[test]
    fn min_flip_cascades_to_root_when_no_sibling_is_on() {
        let g = small_tree();
        let s = LabelState::new(vec![1, 1, 1, -1]).unwrap();
        let omega = TargetSet::turn_off(&[g.id_of("A").unwrap()]).unwrap();
        let result = brute_force_min_flip(&g, &s, &omega, &OracleBudget::default()).unwrap();
        let names: Vec<&str> = result.flips.iter().map(|&n| g.name(n)).collect();
        assert_eq!(names, vec!["R", "W", "A"]);
        assert_eq!(result.minimum_count, 1);
    }

    #[test]
    fn min_flip_is_just_the_target_when_supported() {
        let g = small_tree();
        let s = LabelState::all_on(4);
        let omega = TargetSet::turn_off(&[g.id_of("A").unwrap()]).unwrap();
        let result = brute_force_min_flip(&g, &s, &omega, &OracleBudget::default()).unwrap();
        assert_eq!(result.flips, vec![g.id_of("A").unwrap()]);
        assert_eq!(result.minimum_count, 1);
    }

    #[test]
    fn min_flip_returns_omega_when_already_consistent() {
        // Two parents share the child; dropping one parent stays consistent.
        let g = LabelGraph::build(&["P1", "P2", "c"], &[("P1", "c"), ("P2", "c")]).unwrap();
        let s = LabelState::all_on(3);
        let omega = TargetSet::turn_off(&[g.id_of("P1").unwrap()]).unwrap();
        let result = brute_force_min_flip(&g, &s, &omega, &OracleBudget::default()).unwrap();
        assert_eq!(result.flips, omega.nodes());
    }

    #[test]
    fn budget_rejects_large_graphs() {
        let names: Vec<String> = (0..20).map(|i| format!("n{i}")).collect();
        let edges: Vec<(String, String)> =
            (1..20).map(|i| ("n0".to_string(), format!("n{i}"))).collect();
        let g = LabelGraph::build(&names, &edges).unwrap();
        let s = LabelState::all_on(20);
        let omega = TargetSet::turn_off(&[LabelId(1)]).unwrap();
        assert!(matches!(
            brute_force_min_flip(&g, &s, &omega, &OracleBudget::default()),
            Err(OracleError::BudgetExceeded(_))
        ));
    }

    #[test]
    fn exhaustive_matches_production_checker_on_smoke_cases() {
        let g = small_tree();
        for bits in 0..16u32 {
            let signs: Vec<i8> = (0..4).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect();
            let s = LabelState::new(signs).unwrap();
            for upward in [false, true] {
                let ours = check_global(&g, &s, RuleConfig { upward }).unwrap();
                let oracle = exhaustive_consistency(&g, &s, upward);
                assert_eq!(ours, oracle, "bits {bits:04b} upward {upward}");
            }
        }
    }

    #[test]
    fn exhaustive_flags_lone_on_root() {
        let g = small_tree();
        let s = LabelState::new(vec![1, -1, -1, -1]).unwrap();
        let report = exhaustive_consistency(&g, &s, true);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].rule, Rule::NoOnChild);
        assert!(exhaustive_consistency(&g, &LabelState::all_off(4), true).consistent());
    }

    #[test]
    fn finite_differences_are_exact_on_quadratics() {
        // f(x) = sum(x^2) has gradient 2x and zero third derivative, so the
        // central difference is exact up to rounding.
        let f = |x: &Array1<f64>| x.iter().map(|v| v * v).sum::<f64>();
        let x = array![0.5, -2.0, 3.25];
        let grad = finite_difference_gradient(f, &x, 1e-5).unwrap();
        for (g, v) in grad.iter().zip(x.iter()) {
            assert!((g - 2.0 * v).abs() < 1e-8);
        }
        assert!(matches!(
            finite_difference_gradient(f, &x, 0.0),
            Err(OracleError::InvalidStep(_))
        ));
    }

    #[test]
    fn combinations_enumerate_lexicographically() {
        let all: Vec<Vec<usize>> = Combinations::new(4, 2).collect();
        assert_eq!(
            all,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        let empty: Vec<Vec<usize>> = Combinations::new(3, 0).collect();
        assert_eq!(empty, vec![Vec::<usize>::new()]);
    }
}
