//! Learners and the local gradient-descent update every robot runs.
//!
//! Two classifiers are provided: multinomial logistic regression and a
//! one-hidden-layer tanh MLP. Both expose their parameters as a single flat
//! `f64` vector so that aggregation can operate on raw vectors without
//! knowing the architecture.
//!
//! Flat layout, layer by layer: row-major weight matrix first, then that
//! layer's bias vector.
//!
//! - logistic regression: `W[class][feature]` then `b[class]`
//! - MLP: `W1[hidden][feature]`, `b1[hidden]`, `W2[class][hidden]`, `b2[class]`

use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// Flat parameter vector of a learner; the unit of all communication and
/// aggregation. Guaranteed finite after every operation that returns one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    values: Vec<f64>,
}

impl ModelParams {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let params = Self { values };
        params.check_finite()?;
        Ok(params)
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    /// Largest absolute per-coordinate difference; `inf` on dim mismatch.
    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        if self.dim() != other.dim() {
            return f64::INFINITY;
        }
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One labeled training or test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// Learner architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearnerKind {
    LogisticRegression,
    Mlp1Hidden { hidden_units: usize },
}

/// Architecture plus task shape; determines the flat parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl LearnerSpec {
    pub fn logistic_regression(input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: LearnerKind::LogisticRegression,
            input_dim,
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, num_classes: usize, hidden_units: usize) -> Self {
        Self {
            kind: LearnerKind::Mlp1Hidden { hidden_units },
            input_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec(
                "classifier needs at least two classes".into(),
            ));
        }
        if let LearnerKind::Mlp1Hidden { hidden_units } = self.kind {
            if hidden_units == 0 {
                return Err(Error::InvalidSpec("hidden_units must be positive".into()));
            }
        }
        Ok(())
    }

    /// Total flat parameter count for this spec.
    pub fn param_count(&self) -> usize {
        let d = self.input_dim;
        let m = self.num_classes;
        match self.kind {
            LearnerKind::LogisticRegression => m * d + m,
            LearnerKind::Mlp1Hidden { hidden_units: h } => h * d + h + m * h + m,
        }
    }
}

/// Training hyperparameters shared by every robot in one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Local epochs a top-level robot runs on the round's global model.
    pub top_epochs: u64,
    /// Local epochs every robot runs on its tier's seed model.
    pub local_epochs: u64,
    /// Global communication rounds.
    pub rounds: u64,
    pub lambda_dds: f64,
    pub lambda_dqs: f64,
    /// Number of top-level robots selected by ranking.
    pub top_count: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 16,
            top_epochs: 5,
            local_epochs: 15,
            rounds: 10,
            lambda_dds: 0.5,
            lambda_dqs: 0.5,
            top_count: 2,
            seed: 7,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidHyperparams(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidHyperparams("batch_size must be >= 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidHyperparams(
                "local_epochs must be >= 1".into(),
            ));
        }
        if self.lambda_dds < 0.0 || self.lambda_dqs < 0.0 {
            return Err(Error::InvalidHyperparams(
                "lambda weights must be nonnegative".into(),
            ));
        }
        if self.lambda_dds + self.lambda_dqs <= 0.0 {
            return Err(Error::InvalidHyperparams(
                "lambda_dds + lambda_dqs must be positive".into(),
            ));
        }
        if self.top_count == 0 {
            return Err(Error::InvalidHyperparams("top_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Identifies whose shuffle stream a training call draws from.
///
/// The mini-batch order for epoch `k` of a call is seeded by
/// `derive_seed(hp.seed, [robot_id, round, epoch_offset + k])`. A top-level
/// robot's second training phase in a round continues its epoch counter
/// (offset = top epochs already run), so no two epochs of one robot within
/// one round reuse a shuffle.
#[derive(Debug, Clone, Copy)]
pub struct UpdateContext {
    pub robot_id: u64,
    pub round: u64,
    pub epoch_offset: u64,
}

impl UpdateContext {
    pub fn new(robot_id: u64, round: u64) -> Self {
        Self {
            robot_id,
            round,
            epoch_offset: 0,
        }
    }

    pub fn with_epoch_offset(mut self, epoch_offset: u64) -> Self {
        self.epoch_offset = epoch_offset;
        self
    }
}

/// Initializes a model for `spec`: weights uniform in (-0.1, 0.1) drawn in
/// flat-layout order, biases zero. Deterministic given `(spec, seed)`.
pub fn init_model(spec: &LearnerSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = SplitMix64::new(seed);
    let d = spec.input_dim;
    let m = spec.num_classes;
    let mut values = Vec::with_capacity(spec.param_count());
    let push_layer = |values: &mut Vec<f64>, rows: usize, cols: usize, rng: &mut SplitMix64| {
        for _ in 0..rows * cols {
            values.push(rng.uniform(-0.1, 0.1));
        }
        values.resize(values.len() + rows, 0.0); // biases
    };
    match spec.kind {
        LearnerKind::LogisticRegression => push_layer(&mut values, m, d, &mut rng),
        LearnerKind::Mlp1Hidden { hidden_units: h } => {
            push_layer(&mut values, h, d, &mut rng);
            push_layer(&mut values, m, h, &mut rng);
        }
    }
    ModelParams::new(values)
}

fn check_dims(params: &ModelParams, spec: &LearnerSpec) -> Result<()> {
    if params.dim() != spec.param_count() {
        return Err(Error::DimMismatch {
            expected: spec.param_count(),
            got: params.dim(),
        });
    }
    Ok(())
}

fn check_sample(sample: &LabeledSample, spec: &LearnerSpec) -> Result<()> {
    if sample.features.len() != spec.input_dim {
        return Err(Error::DimMismatch {
            expected: spec.input_dim,
            got: sample.features.len(),
        });
    }
    if sample.label >= spec.num_classes {
        return Err(Error::LabelOutOfRange {
            label: sample.label,
            num_classes: spec.num_classes,
        });
    }
    Ok(())
}

/// Class scores (pre-softmax logits) for a single sample.
fn logits(params: &[f64], spec: &LearnerSpec, x: &[f64], hidden_buf: &mut Vec<f64>) -> Vec<f64> {
    let d = spec.input_dim;
    let m = spec.num_classes;
    match spec.kind {
        LearnerKind::LogisticRegression => {
            let (w, b) = params.split_at(m * d);
            (0..m)
                .map(|c| {
                    let row = &w[c * d..(c + 1) * d];
                    b[c] + dot(row, x)
                })
                .collect()
        }
        LearnerKind::Mlp1Hidden { hidden_units: h } => {
            let (w1, rest) = params.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(m * h);
            hidden_buf.clear();
            hidden_buf.extend((0..h).map(|i| (b1[i] + dot(&w1[i * d..(i + 1) * d], x)).tanh()));
            (0..m)
                .map(|c| b2[c] + dot(&w2[c * h..(c + 1) * h], hidden_buf))
                .collect()
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax probabilities and the log-sum-exp value, computed stably.
fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - zmax).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / sum).collect();
    (probs, zmax + sum.ln())
}

/// Mean cross-entropy loss and its exact analytic gradient over a batch.
pub fn loss_and_grad(
    params: &ModelParams,
    spec: &LearnerSpec,
    batch: &[LabeledSample],
) -> Result<(f64, ModelParams)> {
    let indices: Vec<usize> = (0..batch.len()).collect();
    loss_and_grad_indexed(params, spec, batch, &indices)
}

/// As `loss_and_grad` but over `samples[indices]`; the mini-batch path.
pub(crate) fn loss_and_grad_indexed(
    params: &ModelParams,
    spec: &LearnerSpec,
    samples: &[LabeledSample],
    indices: &[usize],
) -> Result<(f64, ModelParams)> {
    spec.validate()?;
    check_dims(params, spec)?;
    if indices.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for &i in indices {
        check_sample(&samples[i], spec)?;
    }

    let d = spec.input_dim;
    let m = spec.num_classes;
    let p = params.values();
    let mut grad = vec![0.0; params.dim()];
    let inv_batch = 1.0 / indices.len() as f64;
    let mut loss = 0.0;
    let mut hidden = Vec::new();

    for &i in indices {
        let sample = &samples[i];
        let x = &sample.features;
        let z = logits(p, spec, x, &mut hidden);
        let (probs, lse) = softmax(&z);
        loss += (lse - z[sample.label]) * inv_batch;

        match spec.kind {
            LearnerKind::LogisticRegression => {
                let (gw, gb) = grad.split_at_mut(m * d);
                for c in 0..m {
                    let delta = (probs[c] - f64::from(c == sample.label)) * inv_batch;
                    let row = &mut gw[c * d..(c + 1) * d];
                    for k in 0..d {
                        row[k] += delta * x[k];
                    }
                    gb[c] += delta;
                }
            }
            LearnerKind::Mlp1Hidden { hidden_units: h } => {
                let w2_off = h * d + h;
                let mut d_hidden = vec![0.0; h];
                {
                    let w2 = &p[w2_off..w2_off + m * h];
                    let (head, tail) = grad.split_at_mut(w2_off);
                    let (gw2, gb2) = tail.split_at_mut(m * h);
                    let _ = head;
                    for c in 0..m {
                        let delta = (probs[c] - f64::from(c == sample.label)) * inv_batch;
                        let row = &mut gw2[c * h..(c + 1) * h];
                        let w2_row = &w2[c * h..(c + 1) * h];
                        for i in 0..h {
                            row[i] += delta * hidden[i];
                            d_hidden[i] += delta * w2_row[i];
                        }
                        gb2[c] += delta;
                    }
                }
                let (gw1, rest) = grad.split_at_mut(h * d);
                let gb1 = &mut rest[..h];
                for i in 0..h {
                    // delta through tanh; d_hidden already carries 1/B
                    let dpre = d_hidden[i] * (1.0 - hidden[i] * hidden[i]);
                    let row = &mut gw1[i * d..(i + 1) * d];
                    for k in 0..d {
                        row[k] += dpre * x[k];
                    }
                    gb1[i] += dpre;
                }
            }
        }
    }

    Ok((loss, ModelParams::new(grad)?))
}

/// Runs `epochs` passes of mini-batch SGD over the robot's data, shuffling
/// with a seeded stream per epoch (see [`UpdateContext`]). `epochs = 0`
/// returns the input unchanged. Deterministic given inputs, `hp.seed`, and
/// the context.
pub fn local_update(
    params: &ModelParams,
    spec: &LearnerSpec,
    data: &ClientDataset,
    epochs: u64,
    hp: &Hyperparams,
    ctx: UpdateContext,
) -> Result<ModelParams> {
    hp.validate()?;
    spec.validate()?;
    check_dims(params, spec)?;
    if data.samples.is_empty() {
        return Err(Error::EmptyDataset(data.robot_id));
    }
    let mut w = params.clone();
    if epochs == 0 {
        return Ok(w);
    }
    let mut order: Vec<usize> = (0..data.samples.len()).collect();
    for k in 0..epochs {
        let epoch_seed = derive_seed(
            hp.seed,
            &[ctx.robot_id, ctx.round, ctx.epoch_offset + k],
        );
        let mut rng = SplitMix64::new(epoch_seed);
        for (i, slot) in order.iter_mut().enumerate() {
            *slot = i;
        }
        rng.shuffle(&mut order);
        for batch in order.chunks(hp.batch_size) {
            let (_, grad) = loss_and_grad_indexed(&w, spec, &data.samples, batch)?;
            for (wv, gv) in w.values_mut().iter_mut().zip(grad.values()) {
                *wv -= hp.learning_rate * gv;
            }
        }
    }
    w.check_finite()?;
    Ok(w)
}

/// Fraction of test samples whose highest-scoring class matches the label.
/// Score ties resolve to the lowest class index.
pub fn evaluate(params: &ModelParams, spec: &LearnerSpec, test: &[LabeledSample]) -> Result<f64> {
    spec.validate()?;
    check_dims(params, spec)?;
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut hidden = Vec::new();
    let mut correct = 0usize;
    for sample in test {
        check_sample(sample, spec)?;
        let z = logits(params.values(), spec, &sample.features, &mut hidden);
        let mut best = 0usize;
        for (c, &score) in z.iter().enumerate().skip(1) {
            if score > z[best] {
                best = c;
            }
        }
        if best == sample.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}
