//! Desk-scale differentiable multi-label classifiers: scoring, sign
//! prediction, binary cross-entropy with exact input gradients, mini-batch
//! training, and a taxonomy-consistent synthetic data generator.
//!
//! Labels live in {-1, +1}; the cross-entropy maps them to {0, 1} targets via
//! `t = (y + 1) / 2` and is returned as the conventional non-negative loss.
//! Backpropagation is written out by hand for the two architectures, which
//! keeps the attack engine free of any autodiff dependency.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::LabelState;
use crate::hierarchy::{LabelGraph, LabelId};

pub type FeatureVector = Array1<f64>;
pub type Perturbation = Array1<f64>;
pub type ScoreVector = Array1<f64>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label subset is empty")]
    EmptySubset,
    #[error("subsets must be disjoint (label {0} appears in both)")]
    SubsetsOverlap(LabelId),
    #[error("graph has no leaves")]
    NoLeaves,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("label id {0} out of range for {1} labels")]
    LabelOutOfRange(LabelId, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid model/dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Numerically stable logistic function; never under/overflows for finite z.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z), stable for large |z|. `-softplus(-z)` is `ln(sigmoid(z))`.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of `scores` against `labels` over `subset`, as a
/// non-negative sum: for +1 labels `-ln(sigmoid(f))`, for -1 labels
/// `-ln(1 - sigmoid(f))`, evaluated via softplus so extreme scores stay
/// finite.
pub fn bce_loss(
    scores: &ScoreVector,
    labels: &LabelState,
    subset: &[LabelId],
) -> Result<f64, ModelError> {
    if subset.is_empty() {
        return Err(ModelError::EmptySubset);
    }
    if scores.len() != labels.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for &c in subset {
        if c.index() >= scores.len() {
            return Err(ModelError::LabelOutOfRange(c, scores.len()));
        }
        let f = scores[c.index()];
        total += if labels.is_on(c) {
            softplus(-f)
        } else {
            softplus(f)
        };
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    OneHiddenLayer,
}

/// Dense classifier parameters. Weight matrices are (outputs x inputs).
#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierParams {
    Linear {
        weight: Array2<f64>,
        bias: Array1<f64>,
    },
    OneHiddenLayer {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    },
}

impl ClassifierParams {
    pub fn architecture(&self) -> Architecture {
        match self {
            ClassifierParams::Linear { .. } => Architecture::Linear,
            ClassifierParams::OneHiddenLayer { .. } => Architecture::OneHiddenLayer,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ClassifierParams::Linear { weight, .. } => weight.ncols(),
            ClassifierParams::OneHiddenLayer { w1, .. } => w1.ncols(),
        }
    }

    pub fn num_labels(&self) -> usize {
        match self {
            ClassifierParams::Linear { weight, .. } => weight.nrows(),
            ClassifierParams::OneHiddenLayer { w2, .. } => w2.nrows(),
        }
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        match self {
            ClassifierParams::Linear { .. } => None,
            ClassifierParams::OneHiddenLayer { w1, .. } => Some(w1.nrows()),
        }
    }

    /// Seeded Gaussian init, scaled by 1/sqrt(fan_in) per layer.
    pub fn random_init(
        arch: Architecture,
        input_dim: usize,
        num_labels: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if input_dim == 0 || num_labels == 0 {
            return Err(ModelError::InvalidConfig(
                "input_dim and num_labels must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrix = |rows: usize, cols: usize| -> Array2<f64> {
            let scale = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| {
                let v: f64 = rng.sample(StandardNormal);
                v * scale
            })
        };
        Ok(match arch {
            Architecture::Linear => ClassifierParams::Linear {
                weight: matrix(num_labels, input_dim),
                bias: Array1::zeros(num_labels),
            },
            Architecture::OneHiddenLayer => {
                if hidden_dim == 0 {
                    return Err(ModelError::InvalidConfig(
                        "hidden_dim must be positive".into(),
                    ));
                }
                let w1 = matrix(hidden_dim, input_dim);
                let w2 = matrix(num_labels, hidden_dim);
                ClassifierParams::OneHiddenLayer {
                    w1,
                    b1: Array1::zeros(hidden_dim),
                    w2,
                    b2: Array1::zeros(num_labels),
                }
            }
        })
    }

    fn check_input(&self, x: &FeatureVector) -> Result<(), ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::ShapeMismatch(format!(
                "input has {} entries, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Raw per-label scores.
    pub fn scores(&self, x: &FeatureVector) -> Result<ScoreVector, ModelError> {
        self.check_input(x)?;
        Ok(match self {
            ClassifierParams::Linear { weight, bias } => weight.dot(x) + bias,
            ClassifierParams::OneHiddenLayer { w1, b1, w2, b2 } => {
                let hidden = (w1.dot(x) + b1).mapv(|v| v.max(0.0));
                w2.dot(&hidden) + b2
            }
        })
    }

    /// Sign prediction: +1 for strictly positive scores, -1 otherwise.
    pub fn predict(&self, x: &FeatureVector) -> Result<LabelState, ModelError> {
        let scores = self.scores(x)?;
        let signs = scores.iter().map(|&f| if f > 0.0 { 1 } else { -1 }).collect();
        Ok(LabelState::new(signs).expect("signs are +-1 by construction"))
    }
}

/// Gradient with respect to the input of
/// `sign_plus * bce(subset_plus) + sign_minus * bce(subset_minus)`,
/// both terms against `labels`, by exact backpropagation. This single entry
/// point covers all four attack objectives. Errors if the subsets overlap or
/// are both empty.
pub fn loss_input_gradient(
    params: &ClassifierParams,
    x: &FeatureVector,
    labels: &LabelState,
    subset_plus: &[LabelId],
    sign_plus: f64,
    subset_minus: &[LabelId],
    sign_minus: f64,
) -> Result<Perturbation, ModelError> {
    if subset_plus.is_empty() && subset_minus.is_empty() {
        return Err(ModelError::EmptySubset);
    }
    if labels.len() != params.num_labels() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} labels vs {} model outputs",
            labels.len(),
            params.num_labels()
        )));
    }
    for c in subset_plus {
        if subset_minus.contains(c) {
            return Err(ModelError::SubsetsOverlap(*c));
        }
    }

    // d bce_c / d f_c = sigmoid(f_c) - t_c; everything else is linear maps.
    let scores = params.scores(x)?;
    let mut score_grad = Array1::<f64>::zeros(params.num_labels());
    let mut fill = |subset: &[LabelId], coeff: f64| -> Result<(), ModelError> {
        for &c in subset {
            if c.index() >= scores.len() {
                return Err(ModelError::LabelOutOfRange(c, scores.len()));
            }
            let t = if labels.is_on(c) { 1.0 } else { 0.0 };
            score_grad[c.index()] = coeff * (sigmoid(scores[c.index()]) - t);
        }
        Ok(())
    };
    fill(subset_plus, sign_plus)?;
    fill(subset_minus, sign_minus)?;

    Ok(match params {
        ClassifierParams::Linear { weight, .. } => weight.t().dot(&score_grad),
        ClassifierParams::OneHiddenLayer { w1, b1, w2, .. } => {
            let pre_hidden = w1.dot(x) + b1;
            let mask = pre_hidden.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let delta = w2.t().dot(&score_grad) * &mask;
            w1.t().dot(&delta)
        }
    })
}

/// A labeled sample set tied to a specific graph via its content hash.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<LabelState>,
    pub dim: usize,
    pub num_labels: usize,
    pub graph_hash: String,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Splits off the samples from `at` onward into a second dataset (e.g. a
    /// held-out set drawn from the same prototypes). Header fields carry
    /// over.
    pub fn split_off(&mut self, at: usize) -> Result<Dataset, ModelError> {
        if at > self.len() {
            return Err(ModelError::InvalidConfig(format!(
                "cannot split {} samples at {at}",
                self.len()
            )));
        }
        Ok(Dataset {
            features: self.features.split_off(at),
            labels: self.labels.split_off(at),
            dim: self.dim,
            num_labels: self.num_labels,
            graph_hash: self.graph_hash.clone(),
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetConfig {
    pub samples: usize,
    pub dim: usize,
    /// Probability that each leaf label is present, independently.
    pub leaf_activation: f64,
    pub prototype_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticDatasetConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.samples == 0 || self.dim == 0 {
            return Err(ModelError::InvalidConfig(
                "samples and dim must be positive".into(),
            ));
        }
        if !(self.leaf_activation > 0.0 && self.leaf_activation < 1.0) {
            return Err(ModelError::InvalidConfig(
                "leaf_activation must lie in (0, 1)".into(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(ModelError::InvalidConfig(
                "noise_sigma must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn draw_prototypes(
    rng: &mut ChaCha8Rng,
    leaves: &[LabelId],
    dim: usize,
    scale: f64,
) -> Vec<Array1<f64>> {
    leaves
        .iter()
        .map(|_| {
            Array1::from_shape_fn(dim, |_| {
                let v: f64 = rng.sample(StandardNormal);
                v * scale
            })
        })
        .collect()
}

/// The per-leaf feature prototypes the generator uses for a given config,
/// indexed like `g.leaves()`. Deterministic in the seed.
pub fn leaf_prototypes(
    g: &LabelGraph,
    config: &SyntheticDatasetConfig,
) -> Result<Vec<Array1<f64>>, ModelError> {
    config.validate()?;
    let leaves = g.leaves();
    if leaves.is_empty() {
        return Err(ModelError::NoLeaves);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(draw_prototypes(
        &mut rng,
        &leaves,
        config.dim,
        config.prototype_scale,
    ))
}

/// Generates samples whose label states are consistent by construction: each
/// leaf is ON with probability `leaf_activation` (redrawn until at least one
/// leaf is ON), internal nodes are ON exactly when some child is ON, and the
/// feature vector is the sum of the ON leaves' prototypes plus Gaussian
/// noise.
pub fn generate_synthetic(
    g: &LabelGraph,
    config: &SyntheticDatasetConfig,
) -> Result<Dataset, ModelError> {
    config.validate()?;
    let leaves = g.leaves();
    if leaves.is_empty() {
        return Err(ModelError::NoLeaves);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prototypes = draw_prototypes(&mut rng, &leaves, config.dim, config.prototype_scale);

    // Children always sit strictly deeper than their parents, so descending
    // depth order visits children before parents.
    let mut closure_order: Vec<LabelId> = g.ids().collect();
    closure_order.sort_by_key(|&n| std::cmp::Reverse(g.depth(n).expect("id is valid")));

    let mut features = Vec::with_capacity(config.samples);
    let mut labels = Vec::with_capacity(config.samples);
    for _ in 0..config.samples {
        let mut leaf_on = vec![false; leaves.len()];
        loop {
            let mut any = false;
            for on in leaf_on.iter_mut() {
                *on = rng.random::<f64>() < config.leaf_activation;
                any |= *on;
            }
            if any {
                break;
            }
        }

        let mut signs = vec![-1i8; g.node_count()];
        for (leaf, &on) in leaves.iter().zip(&leaf_on) {
            if on {
                signs[leaf.index()] = 1;
            }
        }
        for &n in &closure_order {
            if !g.children(n).is_empty() {
                let on = g.children(n).iter().any(|&c| signs[c.index()] == 1);
                signs[n.index()] = if on { 1 } else { -1 };
            }
        }

        let mut x = Array1::<f64>::zeros(config.dim);
        for (proto, &on) in prototypes.iter().zip(&leaf_on) {
            if on {
                x += proto;
            }
        }
        for v in x.iter_mut() {
            let noise: f64 = rng.sample(StandardNormal);
            *v += noise * config.noise_sigma;
        }

        features.push(x);
        labels.push(LabelState::new(signs).expect("signs are +-1 by construction"));
    }

    Ok(Dataset {
        features,
        labels,
        dim: config.dim,
        num_labels: g.node_count(),
        graph_hash: g.content_hash(),
        seed: config.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Mini-batch gradient descent on the mean BCE over all labels. Sample order
/// is shuffled per epoch from the config seed, so a fixed seed reproduces the
/// final parameters bit for bit. Returns the trained parameters and the
/// per-epoch mean loss measured before each batch update.
pub fn train(
    params: ClassifierParams,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(ClassifierParams, Vec<f64>), ModelError> {
    if data.is_empty() {
        return Err(ModelError::InvalidConfig("dataset is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(ModelError::InvalidConfig("batch_size must be positive".into()));
    }
    if data.dim != params.input_dim() || data.num_labels != params.num_labels() {
        return Err(ModelError::ShapeMismatch(format!(
            "dataset is {}x{} but model expects {}x{}",
            data.dim,
            data.num_labels,
            params.input_dim(),
            params.num_labels()
        )));
    }

    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = data.len();
    let label_count = data.num_labels as f64;
    let mut trace = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        // Fisher-Yates from the shared stream keeps epochs reproducible.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / (batch.len() as f64 * label_count);
            let mut update = GradAccum::zeros(&params);
            for &i in batch {
                let x = &data.features[i];
                let y = &data.labels[i];
                let (loss, grads) = sample_loss_and_param_grads(&params, x, y)?;
                epoch_loss += loss / label_count;
                update.add(&grads, scale);
            }
            update.apply(&mut params, config.learning_rate);
        }
        trace.push(epoch_loss / n as f64);
    }
    Ok((params, trace))
}

struct GradAccum {
    mats: Vec<Array2<f64>>,
    vecs: Vec<Array1<f64>>,
}

impl GradAccum {
    fn zeros(params: &ClassifierParams) -> Self {
        match params {
            ClassifierParams::Linear { weight, bias } => Self {
                mats: vec![Array2::zeros(weight.dim())],
                vecs: vec![Array1::zeros(bias.len())],
            },
            ClassifierParams::OneHiddenLayer { w1, b1, w2, b2 } => Self {
                mats: vec![Array2::zeros(w1.dim()), Array2::zeros(w2.dim())],
                vecs: vec![Array1::zeros(b1.len()), Array1::zeros(b2.len())],
            },
        }
    }

    fn add(&mut self, other: &GradAccum, scale: f64) {
        for (acc, g) in self.mats.iter_mut().zip(&other.mats) {
            acc.scaled_add(scale, g);
        }
        for (acc, g) in self.vecs.iter_mut().zip(&other.vecs) {
            acc.scaled_add(scale, g);
        }
    }

    fn apply(&self, params: &mut ClassifierParams, lr: f64) {
        match params {
            ClassifierParams::Linear { weight, bias } => {
                weight.scaled_add(-lr, &self.mats[0]);
                bias.scaled_add(-lr, &self.vecs[0]);
            }
            ClassifierParams::OneHiddenLayer { w1, b1, w2, b2 } => {
                w1.scaled_add(-lr, &self.mats[0]);
                b1.scaled_add(-lr, &self.vecs[0]);
                w2.scaled_add(-lr, &self.mats[1]);
                b2.scaled_add(-lr, &self.vecs[1]);
            }
        }
    }
}

/// Summed BCE over all labels for one sample, plus parameter gradients of
/// that sum.
fn sample_loss_and_param_grads(
    params: &ClassifierParams,
    x: &FeatureVector,
    labels: &LabelState,
) -> Result<(f64, GradAccum), ModelError> {
    if labels.len() != params.num_labels() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} labels vs {} model outputs",
            labels.len(),
            params.num_labels()
        )));
    }
    match params {
        ClassifierParams::Linear { weight, bias } => {
            let scores = weight.dot(x) + bias;
            let (loss, score_grad) = bce_all_and_grad(&scores, labels);
            let grad_w = outer(&score_grad, x);
            Ok((
                loss,
                GradAccum {
                    mats: vec![grad_w],
                    vecs: vec![score_grad],
                },
            ))
        }
        ClassifierParams::OneHiddenLayer { w1, b1, w2, b2 } => {
            let pre_hidden = w1.dot(x) + b1;
            let hidden = pre_hidden.mapv(|v| v.max(0.0));
            let scores = w2.dot(&hidden) + b2;
            let (loss, score_grad) = bce_all_and_grad(&scores, labels);
            let grad_w2 = outer(&score_grad, &hidden);
            let mask = pre_hidden.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let delta = w2.t().dot(&score_grad) * &mask;
            let grad_w1 = outer(&delta, x);
            Ok((
                loss,
                GradAccum {
                    mats: vec![grad_w1, grad_w2],
                    vecs: vec![delta, score_grad],
                },
            ))
        }
    }
}

fn bce_all_and_grad(scores: &ScoreVector, labels: &LabelState) -> (f64, Array1<f64>) {
    let mut loss = 0.0;
    let mut grad = Array1::zeros(scores.len());
    for i in 0..scores.len() {
        let f = scores[i];
        let on = labels.signs()[i] == 1;
        loss += if on { softplus(-f) } else { softplus(f) };
        let t = if on { 1.0 } else { 0.0 };
        grad[i] = sigmoid(f) - t;
    }
    (loss, grad)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[(i, j)] = ai * bj;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Model and dataset files
// ---------------------------------------------------------------------------

const MODEL_FILE_VERSION: u32 = 1;
const DATASET_MAGIC: &[u8; 4] = b"MLDS";
const DATASET_BINARY_VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    /// Row-major weight entries.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    architecture: Architecture,
    input_dim: usize,
    num_labels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden_dim: Option<usize>,
    layers: Vec<LayerFile>,
}

fn layer_file(w: &Array2<f64>, b: &Array1<f64>) -> LayerFile {
    LayerFile {
        rows: w.nrows(),
        cols: w.ncols(),
        weight: w.iter().copied().collect(),
        bias: b.to_vec(),
    }
}

fn layer_from_file(layer: &LayerFile) -> Result<(Array2<f64>, Array1<f64>), ModelError> {
    if layer.weight.len() != layer.rows * layer.cols {
        return Err(ModelError::Format(format!(
            "layer claims {}x{} but holds {} weights",
            layer.rows,
            layer.cols,
            layer.weight.len()
        )));
    }
    if layer.bias.len() != layer.rows {
        return Err(ModelError::Format(format!(
            "layer has {} rows but {} bias entries",
            layer.rows,
            layer.bias.len()
        )));
    }
    let w = Array2::from_shape_vec((layer.rows, layer.cols), layer.weight.clone())
        .map_err(|e| ModelError::Format(e.to_string()))?;
    Ok((w, Array1::from_vec(layer.bias.clone())))
}

pub fn model_to_json(params: &ClassifierParams) -> String {
    let file = match params {
        ClassifierParams::Linear { weight, bias } => ModelFile {
            version: MODEL_FILE_VERSION,
            architecture: Architecture::Linear,
            input_dim: weight.ncols(),
            num_labels: weight.nrows(),
            hidden_dim: None,
            layers: vec![layer_file(weight, bias)],
        },
        ClassifierParams::OneHiddenLayer { w1, b1, w2, b2 } => ModelFile {
            version: MODEL_FILE_VERSION,
            architecture: Architecture::OneHiddenLayer,
            input_dim: w1.ncols(),
            num_labels: w2.nrows(),
            hidden_dim: Some(w1.nrows()),
            layers: vec![layer_file(w1, b1), layer_file(w2, b2)],
        },
    };
    serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
}

pub fn model_from_json(text: &str) -> Result<ClassifierParams, ModelError> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.version != MODEL_FILE_VERSION {
        return Err(ModelError::Format(format!(
            "unsupported model file version {}",
            file.version
        )));
    }
    match file.architecture {
        Architecture::Linear => {
            if file.layers.len() != 1 {
                return Err(ModelError::Format("linear model needs one layer".into()));
            }
            let (weight, bias) = layer_from_file(&file.layers[0])?;
            if weight.nrows() != file.num_labels || weight.ncols() != file.input_dim {
                return Err(ModelError::Format("layer shape contradicts header".into()));
            }
            Ok(ClassifierParams::Linear { weight, bias })
        }
        Architecture::OneHiddenLayer => {
            if file.layers.len() != 2 {
                return Err(ModelError::Format(
                    "one-hidden-layer model needs two layers".into(),
                ));
            }
            let (w1, b1) = layer_from_file(&file.layers[0])?;
            let (w2, b2) = layer_from_file(&file.layers[1])?;
            if w1.ncols() != file.input_dim
                || w2.nrows() != file.num_labels
                || w1.nrows() != w2.ncols()
                || Some(w1.nrows()) != file.hidden_dim
            {
                return Err(ModelError::Format("layer shapes do not compose".into()));
            }
            Ok(ClassifierParams::OneHiddenLayer { w1, b1, w2, b2 })
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile {
    n: usize,
    d: usize,
    num_labels: usize,
    graph_hash: String,
    seed: u64,
    samples: Vec<SampleFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleFile {
    x: Vec<f64>,
    y: Vec<i8>,
}

pub fn dataset_to_json(data: &Dataset) -> String {
    let samples = data
        .features
        .iter()
        .zip(&data.labels)
        .map(|(x, y)| SampleFile {
            x: x.to_vec(),
            y: y.signs().to_vec(),
        })
        .collect();
    let file = DatasetFile {
        n: data.len(),
        d: data.dim,
        num_labels: data.num_labels,
        graph_hash: data.graph_hash.clone(),
        seed: data.seed,
        samples,
    };
    serde_json::to_string(&file).expect("dataset serialization cannot fail")
}

pub fn dataset_from_json(text: &str) -> Result<Dataset, ModelError> {
    let file: DatasetFile = serde_json::from_str(text)?;
    if file.samples.len() != file.n {
        return Err(ModelError::Format(format!(
            "header claims {} samples, file holds {}",
            file.n,
            file.samples.len()
        )));
    }
    let mut features = Vec::with_capacity(file.n);
    let mut labels = Vec::with_capacity(file.n);
    for s in file.samples {
        if s.x.len() != file.d || s.y.len() != file.num_labels {
            return Err(ModelError::Format("sample shape contradicts header".into()));
        }
        features.push(Array1::from_vec(s.x));
        labels.push(LabelState::new(s.y).map_err(|e| ModelError::Format(e.to_string()))?);
    }
    Ok(Dataset {
        features,
        labels,
        dim: file.d,
        num_labels: file.num_labels,
        graph_hash: file.graph_hash,
        seed: file.seed,
    })
}

pub fn dataset_write_binary(data: &Dataset, w: &mut impl Write) -> Result<(), ModelError> {
    w.write_all(DATASET_MAGIC)?;
    w.write_u8(DATASET_BINARY_VERSION)?;
    w.write_u64::<LittleEndian>(data.len() as u64)?;
    w.write_u64::<LittleEndian>(data.dim as u64)?;
    w.write_u64::<LittleEndian>(data.num_labels as u64)?;
    w.write_u64::<LittleEndian>(data.seed)?;
    let hash = data.graph_hash.as_bytes();
    w.write_u32::<LittleEndian>(hash.len() as u32)?;
    w.write_all(hash)?;
    for (x, y) in data.features.iter().zip(&data.labels) {
        for &v in x.iter() {
            w.write_f64::<LittleEndian>(v)?;
        }
        for &s in y.signs() {
            w.write_i8(s)?;
        }
    }
    Ok(())
}

pub fn dataset_read_binary(r: &mut impl Read) -> Result<Dataset, ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(ModelError::Format("not a binary dataset file".into()));
    }
    let version = r.read_u8()?;
    if version != DATASET_BINARY_VERSION {
        return Err(ModelError::Format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let d = r.read_u64::<LittleEndian>()? as usize;
    let num_labels = r.read_u64::<LittleEndian>()? as usize;
    let seed = r.read_u64::<LittleEndian>()?;
    let hash_len = r.read_u32::<LittleEndian>()? as usize;
    let mut hash = vec![0u8; hash_len];
    r.read_exact(&mut hash)?;
    let graph_hash =
        String::from_utf8(hash).map_err(|_| ModelError::Format("hash is not UTF-8".into()))?;
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = Vec::with_capacity(d);
        for _ in 0..d {
            x.push(r.read_f64::<LittleEndian>()?);
        }
        let mut y = Vec::with_capacity(num_labels);
        for _ in 0..num_labels {
            y.push(r.read_i8()?);
        }
        features.push(Array1::from_vec(x));
        labels.push(LabelState::new(y).map_err(|e| ModelError::Format(e.to_string()))?);
    }
    Ok(Dataset {
        features,
        labels,
        dim: d,
        num_labels,
        graph_hash,
        seed,
    })
}

/// Loads a dataset from bytes, sniffing the binary magic and falling back to
/// the JSON form.
pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset, ModelError> {
    if bytes.starts_with(DATASET_MAGIC) {
        dataset_read_binary(&mut std::io::Cursor::new(bytes))
    } else {
        let text =
            std::str::from_utf8(bytes).map_err(|_| ModelError::Format("not UTF-8".into()))?;
        dataset_from_json(text)
    }
}
