//! Target sampling, attack/detection metrics, and the epsilon-sweep driver.
//!
//! A sweep attacks every eligible test image under each (variant, epsilon)
//! pair, classifies success, runs local verification around each target and
//! global verification over the whole graph, and aggregates:
//!
//! * `SR_N = |S| / |I|` — successful / attacked,
//! * `SR_L = |S \ D_L| / |I|`, `SR_G = |S \ D_G| / |I|` — success that evades
//!   local / global verification,
//! * `DR_L = |D_L| / |S|`, `DR_G = |D_G| / |S|` — detection over successes.
//!
//! Detection is only evaluated on successful attacks, and images whose
//! pre-attack prediction is already inconsistent are excluded from `I` by
//! default (the detector would fire without any attack).

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{
    attack_success, pgd_attack, AttackError, AttackSpec, AttackVariant, NormP,
};
use crate::consistency::{check_global, check_local, LabelState, RuleConfig, StateError};
use crate::expansion::{simulate_flip, TargetSet};
use crate::hierarchy::{LabelGraph, LabelId};
use crate::model::{ClassifierParams, Dataset, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need {needed} present eligible labels, only {got} available")]
    NotEnoughPresentLabels { needed: usize, got: usize },
    #[error("success set is empty; detection rates are undefined")]
    EmptySuccessSet,
    #[error("attacked set is empty; success rates are undefined")]
    EmptyAttackSet,
    #[error("{0} must be a subset of {1}")]
    NotASubset(&'static str, &'static str),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("dataset was generated for a different graph (hash {data} vs {graph})")]
    GraphHashMismatch { data: String, graph: String },
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// How many present labels each attack targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetsMode {
    Single,
    Multi(usize),
}

impl TargetsMode {
    pub fn count(self) -> usize {
        match self {
            TargetsMode::Single => 1,
            TargetsMode::Multi(k) => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Hop radius of the local check around each target.
    pub radius: usize,
    /// Whether the upward (NoOnParent) rule is enabled.
    pub upward: bool,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            radius: 1,
            upward: true,
        }
    }
}

impl DetectionConfig {
    pub fn rules(&self) -> RuleConfig {
        RuleConfig {
            upward: self.upward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub variants: Vec<AttackVariant>,
    /// Strictly increasing perturbation budgets.
    pub epsilons: Vec<f64>,
    pub targets_mode: TargetsMode,
    pub detection: DetectionConfig,
    pub steps: usize,
    /// Absolute PGD step size; wins over `step_fraction` when set.
    pub step_size: Option<f64>,
    /// Step size as a fraction of each epsilon (default 1/4).
    pub step_fraction: f64,
    pub norm_p: NormP,
    pub feature_box: Option<(f64, f64)>,
    pub seed: u64,
    /// Allow abstract (non-original) labels as targets.
    pub targets_from_all_labels: bool,
    /// Keep images whose pre-attack prediction is already inconsistent.
    pub include_inconsistent: bool,
    pub random_start: bool,
}

impl ExperimentConfig {
    pub fn new(variants: Vec<AttackVariant>, epsilons: Vec<f64>, seed: u64) -> Self {
        Self {
            variants,
            epsilons,
            targets_mode: TargetsMode::Single,
            detection: DetectionConfig::default(),
            steps: crate::fixtures::DEFAULT_PGD_STEPS,
            step_size: None,
            step_fraction: 0.25,
            norm_p: NormP::Infinity,
            feature_box: None,
            seed,
            targets_from_all_labels: false,
            include_inconsistent: false,
            random_start: false,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.variants.is_empty() {
            return Err(EvalError::InvalidConfig("no attack variants".into()));
        }
        if self.epsilons.is_empty() {
            return Err(EvalError::InvalidConfig("no epsilons".into()));
        }
        if !self.epsilons.windows(2).all(|w| w[0] < w[1]) {
            return Err(EvalError::InvalidConfig(
                "epsilons must be strictly increasing".into(),
            ));
        }
        if self.targets_mode.count() == 0 {
            return Err(EvalError::InvalidConfig("multi-target k must be >= 1".into()));
        }
        if self.steps == 0 {
            return Err(EvalError::InvalidConfig("steps must be >= 1".into()));
        }
        if !(self.step_fraction > 0.0) {
            return Err(EvalError::InvalidConfig(
                "step_fraction must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// SplitMix64 of `master ^ f(stream)`: cheap, stable derivation of per-task
/// seeds so parallel scheduling cannot perturb any random choice.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform without-replacement choice of `mode.count()` present labels,
/// turn-off direction. Eligibility is given by `eligible` (normally the
/// original-label mask).
pub fn sample_targets(
    state: &LabelState,
    mode: TargetsMode,
    seed: u64,
    eligible: &[bool],
) -> Result<TargetSet, EvalError> {
    let k = mode.count();
    let mut present: Vec<LabelId> = state
        .on_ids()
        .into_iter()
        .filter(|n| eligible.get(n.index()).copied().unwrap_or(false))
        .collect();
    if present.len() < k {
        return Err(EvalError::NotEnoughPresentLabels {
            needed: k,
            got: present.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..k {
        let j = rng.random_range(i..present.len());
        present.swap(i, j);
    }
    present.truncate(k);
    Ok(TargetSet::turn_off(&present).expect("sampled targets are distinct and present"))
}

/// `DR_L = |D_L| / |S|`, `DR_G = |D_G| / |S|`.
pub fn detection_rates(
    successes: &BTreeSet<usize>,
    detected_local: &BTreeSet<usize>,
    detected_global: &BTreeSet<usize>,
) -> Result<(f64, f64), EvalError> {
    if !detected_local.is_subset(successes) {
        return Err(EvalError::NotASubset("detected_local", "successes"));
    }
    if !detected_global.is_subset(successes) {
        return Err(EvalError::NotASubset("detected_global", "successes"));
    }
    if successes.is_empty() {
        return Err(EvalError::EmptySuccessSet);
    }
    let s = successes.len() as f64;
    Ok((
        detected_local.len() as f64 / s,
        detected_global.len() as f64 / s,
    ))
}

/// `SR_N = |S| / |I|`, `SR_L = |S \ D_L| / |I|`, `SR_G = |S \ D_G| / |I|`.
pub fn success_rates(
    attacked: &BTreeSet<usize>,
    successes: &BTreeSet<usize>,
    detected_local: &BTreeSet<usize>,
    detected_global: &BTreeSet<usize>,
) -> Result<(f64, f64, f64), EvalError> {
    if !successes.is_subset(attacked) {
        return Err(EvalError::NotASubset("successes", "attacked"));
    }
    if attacked.is_empty() {
        return Err(EvalError::EmptyAttackSet);
    }
    let i = attacked.len() as f64;
    let undetected_local = successes.difference(detected_local).count() as f64;
    let undetected_global = successes.difference(detected_global).count() as f64;
    Ok((
        successes.len() as f64 / i,
        undetected_local / i,
        undetected_global / i,
    ))
}

/// One (variant, epsilon) cell of the sweep. Rates are `None` when their
/// denominator is empty, and are serialized as empty CSV fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: AttackVariant,
    pub epsilon: f64,
    pub n_attacked: usize,
    pub n_success: usize,
    pub n_detected_local: usize,
    pub n_detected_global: usize,
    pub sr_n: Option<f64>,
    pub sr_l: Option<f64>,
    pub sr_g: Option<f64>,
    pub dr_l: Option<f64>,
    pub dr_g: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<AggregateRow>,
}

/// Per-image attack record; `detected_*` is only meaningful when `success`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub index: usize,
    pub variant: AttackVariant,
    pub epsilon: f64,
    pub omega: Vec<String>,
    pub gamma: Vec<String>,
    pub success: bool,
    pub detected_local: bool,
    pub detected_global: bool,
    pub e_linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub report: MetricsReport,
    pub records: Vec<ImageRecord>,
    pub n_images: usize,
    pub n_eligible: usize,
    pub excluded_inconsistent: Vec<usize>,
    pub excluded_no_targets: Vec<usize>,
    pub warnings: Vec<String>,
    /// Max over all attacks of `linf(e) - epsilon`; must stay <= 1e-12.
    pub max_budget_excess: f64,
}

struct EligibleImage {
    index: usize,
    pre: LabelState,
    omega: TargetSet,
}

/// Attacks every eligible image for each (variant, epsilon) pair and
/// aggregates the metrics. `jobs = 0` uses all cores; the outcome is
/// identical for any job count.
pub fn run_sweep(
    g: &LabelGraph,
    params: &ClassifierParams,
    data: &Dataset,
    config: &ExperimentConfig,
    jobs: usize,
) -> Result<SweepOutcome, EvalError> {
    config.validate()?;
    if data.graph_hash != g.content_hash() {
        return Err(EvalError::GraphHashMismatch {
            data: data.graph_hash.clone(),
            graph: g.content_hash(),
        });
    }
    let rules = config.detection.rules();
    let eligible_mask: Vec<bool> = if config.targets_from_all_labels {
        vec![true; g.node_count()]
    } else {
        g.original_mask().to_vec()
    };

    let mut eligible = Vec::new();
    let mut excluded_inconsistent = Vec::new();
    let mut excluded_no_targets = Vec::new();
    for (i, x) in data.features.iter().enumerate() {
        let pre = params.predict(x)?;
        if !config.include_inconsistent && !check_global(g, &pre, rules)?.consistent() {
            excluded_inconsistent.push(i);
            continue;
        }
        match sample_targets(&pre, config.targets_mode, derive_seed(config.seed, i as u64), &eligible_mask)
        {
            Ok(omega) => eligible.push(EligibleImage {
                index: i,
                pre,
                omega,
            }),
            Err(EvalError::NotEnoughPresentLabels { .. }) => excluded_no_targets.push(i),
            Err(e) => return Err(e),
        }
    }

    // One task per (variant, epsilon, image), in that nesting order; the
    // ordered collect makes aggregation independent of the thread count.
    let mut tasks = Vec::new();
    for (vi, &variant) in config.variants.iter().enumerate() {
        for (ei, &epsilon) in config.epsilons.iter().enumerate() {
            for img in &eligible {
                tasks.push((vi, ei, variant, epsilon, img));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| EvalError::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Result<Vec<ImageRecord>, EvalError> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(vi, ei, variant, epsilon, img)| {
                run_one_attack(g, params, data, config, rules, vi, ei, variant, epsilon, img)
            })
            .collect()
    });
    let records = results?;

    let mut rows = Vec::new();
    let mut max_budget_excess = f64::NEG_INFINITY;
    for (vi, &variant) in config.variants.iter().enumerate() {
        for (ei, &epsilon) in config.epsilons.iter().enumerate() {
            let offset = (vi * config.epsilons.len() + ei) * eligible.len();
            let cell = &records[offset..offset + eligible.len()];
            let mut attacked = BTreeSet::new();
            let mut successes = BTreeSet::new();
            let mut dl = BTreeSet::new();
            let mut dg = BTreeSet::new();
            for r in cell {
                attacked.insert(r.index);
                if r.success {
                    successes.insert(r.index);
                    if r.detected_local {
                        dl.insert(r.index);
                    }
                    if r.detected_global {
                        dg.insert(r.index);
                    }
                }
                max_budget_excess = max_budget_excess.max(r.e_linf - epsilon);
            }
            let (sr_n, sr_l, sr_g) = match success_rates(&attacked, &successes, &dl, &dg) {
                Ok((a, b, c)) => (Some(a), Some(b), Some(c)),
                Err(EvalError::EmptyAttackSet) => (None, None, None),
                Err(e) => return Err(e),
            };
            let (dr_l, dr_g) = match detection_rates(&successes, &dl, &dg) {
                Ok((a, b)) => (Some(a), Some(b)),
                Err(EvalError::EmptySuccessSet) => (None, None),
                Err(e) => return Err(e),
            };
            rows.push(AggregateRow {
                variant,
                epsilon,
                n_attacked: attacked.len(),
                n_success: successes.len(),
                n_detected_local: dl.len(),
                n_detected_global: dg.len(),
                sr_n,
                sr_l,
                sr_g,
                dr_l,
                dr_g,
            });
        }
    }

    // Soft trend check: success should not fall as the budget grows. A
    // violation flags the run for review instead of aborting it.
    let mut warnings = Vec::new();
    for &variant in &config.variants {
        let of = |eps: f64| {
            rows.iter()
                .find(|r| r.variant == variant && r.epsilon == eps)
                .and_then(|r| r.sr_n)
        };
        if let (Some(lo), Some(hi)) = (
            of(*config.epsilons.first().unwrap()),
            of(*config.epsilons.last().unwrap()),
        ) {
            if hi < lo {
                warnings.push(format!(
                    "{variant}: SR_N fell from {lo} at eps={} to {hi} at eps={}",
                    config.epsilons.first().unwrap(),
                    config.epsilons.last().unwrap()
                ));
            }
        }
    }

    Ok(SweepOutcome {
        report: MetricsReport { rows },
        records,
        n_images: data.len(),
        n_eligible: eligible.len(),
        excluded_inconsistent,
        excluded_no_targets,
        warnings,
        max_budget_excess: if max_budget_excess.is_finite() {
            max_budget_excess
        } else {
            0.0
        },
    })
}

#[allow(clippy::too_many_arguments)]
fn run_one_attack(
    g: &LabelGraph,
    params: &ClassifierParams,
    data: &Dataset,
    config: &ExperimentConfig,
    rules: RuleConfig,
    vi: usize,
    ei: usize,
    variant: AttackVariant,
    epsilon: f64,
    img: &EligibleImage,
) -> Result<ImageRecord, EvalError> {
    let task_stream =
        (img.index as u64) | ((vi as u64) << 40) | ((ei as u64) << 48) | (1 << 63);
    let spec = AttackSpec {
        variant,
        epsilon,
        norm_p: config.norm_p,
        steps: config.steps,
        step_size: config.step_size.unwrap_or(epsilon * config.step_fraction),
        feature_box: config.feature_box,
        seed: derive_seed(config.seed, task_stream),
        random_start: config.random_start,
    };
    let x = &data.features[img.index];
    let result = pgd_attack(params, x, &img.pre, &spec, &img.omega, g)?;
    debug_assert!(attack_success(&img.pre, &result.post_state, &img.omega)? == result.success);

    let (mut detected_local, mut detected_global) = (false, false);
    if result.success {
        detected_global = !check_global(g, &result.post_state, rules)?.consistent();
        for &(n, _) in img.omega.entries() {
            if !check_local(g, &result.post_state, n, config.detection.radius, rules)?
                .consistent()
            {
                detected_local = true;
                break;
            }
        }
        // Any violation inside a local window is also a global violation.
        debug_assert!(!detected_local || detected_global);
        if !result.gamma.is_empty() {
            if let Ok(exact) = simulate_flip(&img.pre, &result.gamma) {
                if exact == result.post_state {
                    debug_assert!(
                        !detected_global,
                        "an exact expanded-set flip must stay consistent"
                    );
                }
            }
        }
    }

    Ok(ImageRecord {
        index: img.index,
        variant,
        epsilon,
        omega: img.omega.nodes().iter().map(|&n| g.name(n).to_string()).collect(),
        gamma: result
            .gamma
            .nodes()
            .iter()
            .map(|&n| g.name(n).to_string())
            .collect(),
        success: result.success,
        detected_local,
        detected_global,
        e_linf: result.linf_norm(),
    })
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

pub const CSV_HEADER: [&str; 11] = [
    "variant",
    "epsilon",
    "n_attacked",
    "n_success",
    "n_detected_local",
    "n_detected_global",
    "sr_n",
    "sr_l",
    "sr_g",
    "dr_l",
    "dr_g",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the aggregate rows as CSV in the fixed column order.
pub fn write_results_csv(rows: &[AggregateRow], out: &mut impl Write) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.variant.as_str().to_string(),
            r.epsilon.to_string(),
            r.n_attacked.to_string(),
            r.n_success.to_string(),
            r.n_detected_local.to_string(),
            r.n_detected_global.to_string(),
            fmt_opt(r.sr_n),
            fmt_opt(r.sr_l),
            fmt_opt(r.sr_g),
            fmt_opt(r.dr_l),
            fmt_opt(r.dr_g),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a results CSV back into rows (used by `plot-data` and the tests).
pub fn read_results_csv(text: &str) -> Result<Vec<AggregateRow>, EvalError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let parse_opt = |field: &str| -> Result<Option<f64>, EvalError> {
        if field.is_empty() {
            Ok(None)
        } else {
            field
                .parse::<f64>()
                .map(Some)
                .map_err(|e| EvalError::InvalidConfig(format!("bad rate field: {e}")))
        }
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| record.get(i).unwrap_or_default();
        rows.push(AggregateRow {
            variant: AttackVariant::parse(get(0))
                .map_err(|e| EvalError::InvalidConfig(e.to_string()))?,
            epsilon: get(1)
                .parse()
                .map_err(|e| EvalError::InvalidConfig(format!("bad epsilon: {e}")))?,
            n_attacked: get(2)
                .parse()
                .map_err(|e| EvalError::InvalidConfig(format!("bad count: {e}")))?,
            n_success: get(3)
                .parse()
                .map_err(|e| EvalError::InvalidConfig(format!("bad count: {e}")))?,
            n_detected_local: get(4)
                .parse()
                .map_err(|e| EvalError::InvalidConfig(format!("bad count: {e}")))?,
            n_detected_global: get(5)
                .parse()
                .map_err(|e| EvalError::InvalidConfig(format!("bad count: {e}")))?,
            sr_n: parse_opt(get(6))?,
            sr_l: parse_opt(get(7))?,
            sr_g: parse_opt(get(8))?,
            dr_l: parse_opt(get(9))?,
            dr_g: parse_opt(get(10))?,
        });
    }
    Ok(rows)
}

/// Writes one JSON line per image record.
pub fn write_records_jsonl(
    records: &[ImageRecord],
    out: &mut impl Write,
) -> Result<(), EvalError> {
    for r in records {
        serde_json::to_writer(&mut *out, r).map_err(ModelError::Json)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reshapes aggregate rows into one series per variant for external
/// plotting: epsilon on the x axis, each metric as a y array.
pub fn plot_data(rows: &[AggregateRow]) -> serde_json::Value {
    let mut epsilons: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    epsilons.sort_by(f64::total_cmp);
    epsilons.dedup();
    let mut variants: Vec<AttackVariant> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant) {
            variants.push(r.variant);
        }
    }
    let metric = |variant: AttackVariant, pick: fn(&AggregateRow) -> Option<f64>| {
        epsilons
            .iter()
            .map(|&e| {
                rows.iter()
                    .find(|r| r.variant == variant && r.epsilon == e)
                    .and_then(pick)
                    .map(serde_json::Value::from)
                    .unwrap_or(serde_json::Value::Null)
            })
            .collect::<Vec<_>>()
    };
    let series: serde_json::Map<String, serde_json::Value> = variants
        .iter()
        .map(|&v| {
            (
                v.as_str().to_string(),
                serde_json::json!({
                    "sr_n": metric(v, |r| r.sr_n),
                    "sr_l": metric(v, |r| r.sr_l),
                    "sr_g": metric(v, |r| r.sr_g),
                    "dr_l": metric(v, |r| r.dr_l),
                    "dr_g": metric(v, |r| r.dr_g),
                }),
            )
        })
        .collect();
    serde_json::json!({ "epsilons": epsilons, "series": series })
}
