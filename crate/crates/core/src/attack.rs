//! The four attack objectives and the projected-gradient solver.
//!
//! Every variant ascends the cross-entropy of a *flip* set against the
//! pre-attack labels (pushing those scores across the decision boundary) and,
//! for the beta variants, simultaneously descends the cross-entropy of a
//! *keep* set (holding everything else in place):
//!
//! * `MlaAlpha`  — flip the targets, no keep term.
//! * `MlaBeta`   — flip the targets, keep all other labels.
//! * `GmlaAlpha` — flip the expanded target set, no keep term.
//! * `GmlaBeta`  — flip the expanded target set, keep all other labels.
//!
//! The solver takes fixed sign-gradient steps projected onto the epsilon ball
//! (L-infinity by default), starting from zero, and stops early at the first
//! iterate whose flip set has fully flipped (and, for beta variants, whose
//! keep set is intact).

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::LabelState;
use crate::expansion::{expand, ExpandedTargetSet, ExpansionError, TargetSet};
use crate::hierarchy::{LabelGraph, LabelId};
use crate::model::{bce_loss, loss_input_gradient, ClassifierParams, FeatureVector, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackVariant {
    MlaAlpha,
    MlaBeta,
    GmlaAlpha,
    GmlaBeta,
}

impl AttackVariant {
    pub const ALL: [AttackVariant; 4] = [
        AttackVariant::MlaAlpha,
        AttackVariant::MlaBeta,
        AttackVariant::GmlaAlpha,
        AttackVariant::GmlaBeta,
    ];

    /// Graph-based variants attack the expanded target set.
    pub fn is_graph_based(self) -> bool {
        matches!(self, AttackVariant::GmlaAlpha | AttackVariant::GmlaBeta)
    }

    /// Beta variants carry the keep term over the complement.
    pub fn has_keep_term(self) -> bool {
        matches!(self, AttackVariant::MlaBeta | AttackVariant::GmlaBeta)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttackVariant::MlaAlpha => "mla_alpha",
            AttackVariant::MlaBeta => "mla_beta",
            AttackVariant::GmlaAlpha => "gmla_alpha",
            AttackVariant::GmlaBeta => "gmla_beta",
        }
    }

    pub fn parse(text: &str) -> Result<Self, AttackError> {
        match text {
            "mla_alpha" | "mla-alpha" => Ok(AttackVariant::MlaAlpha),
            "mla_beta" | "mla-beta" => Ok(AttackVariant::MlaBeta),
            "gmla_alpha" | "gmla-alpha" => Ok(AttackVariant::GmlaAlpha),
            "gmla_beta" | "gmla-beta" => Ok(AttackVariant::GmlaBeta),
            other => Err(AttackError::UnknownVariant(other.to_string())),
        }
    }
}

impl std::fmt::Display for AttackVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormP {
    Infinity,
    L2,
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("unknown attack variant {0:?}")]
    UnknownVariant(String),
    #[error("graph-based variant needs a non-empty expanded target set")]
    GammaMissing,
    #[error("target {0} is missing from the expanded target set")]
    OmegaNotInGamma(LabelId),
    #[error("target set is empty")]
    EmptyTargetSet,
    #[error("states have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid attack spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
}

/// Attack hyperparameters. `step_size` defaults to `epsilon / 4` when taken
/// from [`AttackSpec::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub variant: AttackVariant,
    pub epsilon: f64,
    pub norm_p: NormP,
    pub steps: usize,
    pub step_size: f64,
    /// Optional (low, high) clamp on the perturbed features, for image-like
    /// data.
    pub feature_box: Option<(f64, f64)>,
    pub seed: u64,
    /// Start from a uniform random point in the ball instead of zero.
    pub random_start: bool,
}

impl AttackSpec {
    pub fn new(variant: AttackVariant, epsilon: f64, steps: usize) -> Self {
        Self {
            variant,
            epsilon,
            norm_p: NormP::Infinity,
            steps,
            step_size: epsilon / 4.0,
            feature_box: None,
            seed: 0,
            random_start: false,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(AttackError::InvalidSpec(format!(
                "epsilon must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(AttackError::InvalidSpec("steps must be at least 1".into()));
        }
        if self.step_size <= 0.0 || !self.step_size.is_finite() {
            return Err(AttackError::InvalidSpec(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if let Some((low, high)) = self.feature_box {
            if low >= high {
                return Err(AttackError::InvalidSpec(format!(
                    "feature box is empty: [{low}, {high}]"
                )));
            }
        }
        if self.step_size > 2.0 * self.epsilon {
            log::warn!(
                "step_size {} exceeds 2*epsilon = {}; iterates will bounce across the ball",
                self.step_size,
                2.0 * self.epsilon
            );
        }
        Ok(())
    }
}

/// Outcome of one attack. `gamma` is empty for the naive (MLA) variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub perturbation: Vec<f64>,
    pub pre_state: LabelState,
    pub post_state: LabelState,
    pub omega: TargetSet,
    pub gamma: ExpandedTargetSet,
    /// Every target in omega flipped relative to the pre-attack prediction.
    pub success: bool,
    pub iterations_used: usize,
    /// Paper-style objective (keep-term BCE minus flip-term BCE) per
    /// iteration; lower is better for the attacker.
    pub objective_trace: Vec<f64>,
    /// Diagnostic: no label outside the flip set changed.
    pub keep_set_preserved: bool,
    pub early_stopped: bool,
}

impl AttackResult {
    pub fn linf_norm(&self) -> f64 {
        self.perturbation.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Splits the label set into the (flip, keep) subsets a variant optimizes.
pub fn objective_subsets(
    variant: AttackVariant,
    omega: &TargetSet,
    gamma: Option<&ExpandedTargetSet>,
    num_labels: usize,
) -> Result<(Vec<LabelId>, Vec<LabelId>), AttackError> {
    if omega.is_empty() {
        return Err(AttackError::EmptyTargetSet);
    }
    let flip: Vec<LabelId> = if variant.is_graph_based() {
        let gamma = gamma.filter(|g| !g.is_empty()).ok_or(AttackError::GammaMissing)?;
        for (n, _) in omega.entries() {
            if !gamma.contains(*n) {
                return Err(AttackError::OmegaNotInGamma(*n));
            }
        }
        gamma.nodes()
    } else {
        omega.nodes()
    };
    let keep: Vec<LabelId> = if variant.has_keep_term() {
        (0..num_labels as u32)
            .map(LabelId)
            .filter(|n| !flip.contains(n))
            .collect()
    } else {
        Vec::new()
    };
    Ok((flip, keep))
}

/// True iff every omega entry changed sign between `pre` and `post`.
pub fn attack_success(
    pre: &LabelState,
    post: &LabelState,
    omega: &TargetSet,
) -> Result<bool, AttackError> {
    if pre.len() != post.len() {
        return Err(AttackError::LengthMismatch(pre.len(), post.len()));
    }
    if omega.is_empty() {
        return Err(AttackError::EmptyTargetSet);
    }
    Ok(omega
        .entries()
        .iter()
        .all(|&(n, _)| post.sign(n) == -pre.sign(n)))
}

/// Runs the projected-gradient attack for `spec` against `labels` (normally
/// the model's own pre-attack prediction). For graph-based variants the
/// expanded target set is computed from `graph` first. Deterministic given
/// the spec.
pub fn pgd_attack(
    params: &ClassifierParams,
    x: &FeatureVector,
    labels: &LabelState,
    spec: &AttackSpec,
    omega: &TargetSet,
    graph: &LabelGraph,
) -> Result<AttackResult, AttackError> {
    spec.validate()?;
    omega.check_against(graph, labels)?;
    if labels.len() != params.num_labels() {
        return Err(AttackError::LengthMismatch(labels.len(), params.num_labels()));
    }

    let gamma = if spec.variant.is_graph_based() {
        expand(graph, labels, omega)?
    } else {
        ExpandedTargetSet::empty()
    };
    let (flip, keep) = objective_subsets(
        spec.variant,
        omega,
        if spec.variant.is_graph_based() {
            Some(&gamma)
        } else {
            None
        },
        labels.len(),
    )?;

    // Desired post-attack sign for every flip-set label.
    let desired: Vec<(LabelId, i8)> = flip.iter().map(|&n| (n, -labels.sign(n))).collect();

    let dim = params.input_dim();
    let mut e: Array1<f64> = if spec.random_start && spec.epsilon > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Array1::from_shape_fn(dim, |_| rng.random_range(-spec.epsilon..=spec.epsilon))
    } else {
        Array1::zeros(dim)
    };

    let objective = |scores: &Array1<f64>| -> Result<f64, AttackError> {
        let flip_term = bce_loss(scores, labels, &flip)?;
        let keep_term = if keep.is_empty() {
            0.0
        } else {
            bce_loss(scores, labels, &keep)?
        };
        Ok(keep_term - flip_term)
    };

    let mut trace = Vec::with_capacity(spec.steps);
    let mut best_e = e.clone();
    let mut best_obj = f64::INFINITY;
    let mut early_stopped = false;
    let mut iterations_used = 0;

    for _ in 0..spec.steps {
        iterations_used += 1;
        let perturbed = x + &e;
        let grad =
            loss_input_gradient(params, &perturbed, labels, &flip, 1.0, &keep, -1.0)?;
        match spec.norm_p {
            NormP::Infinity => {
                e.zip_mut_with(&grad, |ei, &gi| {
                    *ei = (*ei + spec.step_size * gi.signum())
                        .clamp(-spec.epsilon, spec.epsilon);
                });
            }
            NormP::L2 => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > 0.0 {
                    e.scaled_add(spec.step_size / norm, &grad);
                }
                let e_norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
                if e_norm > spec.epsilon {
                    e.mapv_inplace(|v| v * spec.epsilon / e_norm);
                }
            }
        }
        if let Some((low, high)) = spec.feature_box {
            // Clamping x+e into the box only ever shrinks |e|.
            for i in 0..dim {
                e[i] = (x[i] + e[i]).clamp(low, high) - x[i];
            }
        }
        debug_assert!(
            spec.norm_p != NormP::Infinity
                || e.iter().all(|v| v.abs() <= spec.epsilon + 1e-12),
            "perturbation left the epsilon ball"
        );

        let scores = params.scores(&(x + &e))?;
        let post: Vec<i8> = scores.iter().map(|&f| if f > 0.0 { 1 } else { -1 }).collect();
        let obj = objective(&scores)?;
        trace.push(obj);

        let flipped = desired.iter().all(|&(n, want)| post[n.index()] == want);
        let kept = !spec.variant.has_keep_term()
            || keep.iter().all(|&n| post[n.index()] == labels.sign(n));
        if flipped && kept {
            best_e = e.clone();
            early_stopped = true;
            break;
        }
        if obj < best_obj {
            best_obj = obj;
            best_e = e.clone();
        }
    }

    let post_state = params.predict(&(x + &best_e))?;
    let success = attack_success(labels, &post_state, omega)?;
    let keep_set_preserved = (0..labels.len() as u32)
        .map(LabelId)
        .filter(|n| !flip.contains(n))
        .all(|n| post_state.sign(n) == labels.sign(n));

    Ok(AttackResult {
        perturbation: best_e.to_vec(),
        pre_state: labels.clone(),
        post_state,
        omega: omega.clone(),
        gamma,
        success,
        iterations_used,
        objective_trace: trace,
        keep_set_preserved,
        early_stopped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::{check_global, RuleConfig};
    use crate::expansion::{simulate_flip, FlipDirection};
    use crate::model::Architecture;
    use ndarray::array;

    fn small_tree() -> LabelGraph {
        LabelGraph::build(&["R", "W", "A", "B"], &[("R", "W"), ("W", "A"), ("W", "B")]).unwrap()
    }

    #[test]
    fn subsets_for_each_variant() {
        let omega = TargetSet::turn_off(&[LabelId(3)]).unwrap();
        let (flip, keep) =
            objective_subsets(AttackVariant::MlaAlpha, &omega, None, 5).unwrap();
        assert_eq!(flip, vec![LabelId(3)]);
        assert!(keep.is_empty());

        let (flip, keep) = objective_subsets(AttackVariant::MlaBeta, &omega, None, 5).unwrap();
        assert_eq!(flip, vec![LabelId(3)]);
        assert_eq!(keep, vec![LabelId(0), LabelId(1), LabelId(2), LabelId(4)]);
    }

    #[test]
    fn gmla_subsets_composed_with_expansion() {
        let g = small_tree();
        let s = LabelState::new(vec![1, 1, 1, -1]).unwrap();
        let omega = TargetSet::turn_off(&[g.id_of("A").unwrap()]).unwrap();
        let gamma = expand(&g, &s, &omega).unwrap();
        let (flip, keep) =
            objective_subsets(AttackVariant::GmlaBeta, &omega, Some(&gamma), 4).unwrap();
        let flip_names: Vec<&str> = flip.iter().map(|&n| g.name(n)).collect();
        assert_eq!(flip_names, vec!["A", "W", "R"]);
        assert_eq!(keep, vec![g.id_of("B").unwrap()]);
    }

    #[test]
    fn gmla_requires_gamma() {
        let omega = TargetSet::turn_off(&[LabelId(0)]).unwrap();
        assert!(matches!(
            objective_subsets(AttackVariant::GmlaAlpha, &omega, None, 3),
            Err(AttackError::GammaMissing)
        ));
    }

    #[test]
    fn success_requires_every_target_to_flip() {
        let pre = LabelState::new(vec![1, 1, -1]).unwrap();
        let post_good = LabelState::new(vec![-1, -1, -1]).unwrap();
        let post_half = LabelState::new(vec![-1, 1, -1]).unwrap();
        let omega = TargetSet::turn_off(&[LabelId(0), LabelId(1)]).unwrap();
        assert!(attack_success(&pre, &post_good, &omega).unwrap());
        assert!(!attack_success(&pre, &post_half, &omega).unwrap());
    }

    #[test]
    fn projection_arithmetic_on_sign_steps() {
        // Linear model with one label per input coordinate; gradient signs
        // are constant, so each step moves by +-step until the ball clips.
        let params = ClassifierParams::Linear {
            weight: array![[1.0, 0.0], [0.0, -1.0]],
            bias: array![-5.0, -5.0],
        };
        let x = array![0.0, 0.0];
        let labels = params.predict(&x).unwrap();
        let g = LabelGraph::build(&["a", "b"], &[]).unwrap();
        let omega = TargetSet::new(vec![
            (LabelId(0), FlipDirection::TurnOn),
            (LabelId(1), FlipDirection::TurnOn),
        ])
        .unwrap();
        let mut spec = AttackSpec::new(AttackVariant::MlaAlpha, 0.1, 2);
        spec.step_size = 0.08;
        let result = pgd_attack(&params, &x, &labels, &spec, &omega, &g).unwrap();
        // After two 0.08 steps the projection clips both coordinates to 0.1.
        assert!((result.perturbation[0] - 0.1).abs() < 1e-15);
        assert!((result.perturbation[1] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn linear_single_target_flips_within_budget() {
        // Score w.x + b with |score| < eps * |w|_1 can always be flipped.
        let params = ClassifierParams::Linear {
            weight: array![[2.0, -1.0]],
            bias: array![0.5],
        };
        let x = array![0.2, 0.1];
        let labels = params.predict(&x).unwrap();
        assert_eq!(labels.signs(), &[1]);
        let g = LabelGraph::build(&["only"], &[]).unwrap();
        let omega = TargetSet::turn_off(&[LabelId(0)]).unwrap();
        let spec = AttackSpec::new(AttackVariant::MlaAlpha, 1.0, 10);
        let result = pgd_attack(&params, &x, &labels, &spec, &omega, &g).unwrap();
        assert!(result.success);
        assert!(result.early_stopped);
        assert!(result.linf_norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn zero_epsilon_never_succeeds() {
        let params = ClassifierParams::Linear {
            weight: array![[1.0]],
            bias: array![1.0],
        };
        let x = array![0.0];
        let labels = params.predict(&x).unwrap();
        let g = LabelGraph::build(&["only"], &[]).unwrap();
        let omega = TargetSet::turn_off(&[LabelId(0)]).unwrap();
        let spec = AttackSpec::new(AttackVariant::MlaAlpha, 0.0, 3);
        let mut spec = spec;
        spec.step_size = 0.01;
        let result = pgd_attack(&params, &x, &labels, &spec, &omega, &g).unwrap();
        assert!(!result.success);
        assert_eq!(result.perturbation, vec![0.0]);
    }

    #[test]
    fn attack_is_deterministic() {
        let params =
            ClassifierParams::random_init(Architecture::OneHiddenLayer, 6, 4, 8, 42).unwrap();
        let g = LabelGraph::build(
            &["r", "m", "a", "b"],
            &[("r", "m"), ("m", "a"), ("m", "b")],
        )
        .unwrap();
        let x = array![0.1, -0.2, 0.3, 0.0, 0.5, -0.4];
        let labels = params.predict(&x).unwrap();
        let on = labels.on_ids();
        if on.is_empty() {
            panic!("seed produced an all-off prediction; pick another seed");
        }
        let omega = TargetSet::turn_off(&[on[0]]).unwrap();
        let spec = AttackSpec::new(AttackVariant::GmlaBeta, 0.3, 8);
        let a = pgd_attack(&params, &x, &labels, &spec, &omega, &g).unwrap();
        let b = pgd_attack(&params, &x, &labels, &spec, &omega, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn structural_consistency_of_exact_gamma_flip() {
        // Pure graph fact, no model involved: flipping exactly the expanded
        // set of a consistent state is globally consistent.
        let g = small_tree();
        let s = LabelState::new(vec![1, 1, 1, -1]).unwrap();
        let omega = TargetSet::turn_off(&[g.id_of("A").unwrap()]).unwrap();
        let gamma = expand(&g, &s, &omega).unwrap();
        let post = simulate_flip(&s, &gamma).unwrap();
        assert!(check_global(&g, &post, RuleConfig::default())
            .unwrap()
            .consistent());
    }

    #[test]
    fn budget_is_respected_across_a_mini_sweep() {
        let params =
            ClassifierParams::random_init(Architecture::Linear, 8, 4, 0, 7).unwrap();
        let g = LabelGraph::build(
            &["r", "m", "a", "b"],
            &[("r", "m"), ("m", "a"), ("m", "b")],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for eps in [0.05, 0.2, 0.8] {
            for _ in 0..5 {
                let x = Array1::from_shape_fn(8, |_| rng.random_range(-1.0..1.0));
                let labels = params.predict(&x).unwrap();
                let on = labels.on_ids();
                if on.is_empty() {
                    continue;
                }
                let omega = TargetSet::turn_off(&[on[0]]).unwrap();
                for variant in AttackVariant::ALL {
                    let spec = AttackSpec::new(variant, eps, 6);
                    let r = pgd_attack(&params, &x, &labels, &spec, &omega, &g).unwrap();
                    assert!(r.linf_norm() <= eps + 1e-12);
                }
            }
        }
    }

    #[test]
    fn linear_gradient_sign_invariant_under_row_scaling() {
        let w = array![[0.3, -0.8, 0.5]];
        let make = |scale: f64| ClassifierParams::Linear {
            weight: &w * scale,
            bias: array![0.1 * scale],
        };
        let x = array![0.4, 0.2, -0.9];
        let labels = LabelState::new(vec![1]).unwrap();
        let g1 = loss_input_gradient(&make(1.0), &x, &labels, &[LabelId(0)], 1.0, &[], -1.0)
            .unwrap();
        let g2 = loss_input_gradient(&make(20.0), &x, &labels, &[LabelId(0)], 1.0, &[], -1.0)
            .unwrap();
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert_eq!(a.signum(), b.signum());
        }
    }
}
