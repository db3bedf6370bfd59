//! Contrastive neural ratio estimation.
//!
//! A scoring network f(x, c) = Encoder(x)ᵀ·W_c is trained as a binary
//! classifier separating joint draws (x, c) from product-of-marginals draws
//! (x, c′), where c′ comes from shuffling the class labels within a batch.
//! At the optimum f(x, c) = log p(x|c) − log p̄(x) with p̄ the class-mixture
//! marginal, so differences f(x, a) − f(x, b) recover log density ratios
//! between conditions.
//!
//! The loss over a batch of B positives and B shuffled negatives is
//!
//! L = (1/2B) [ Σ softplus(−f(x_b, c_b)) + Σ softplus(f(x_b, c_{π(b)})) ]
//!
//! minimized with the adaptive-moment optimizer (β₁=0.9, β₂=0.999, ε=1e-8).
//! Inputs are whitened (covariance Cholesky) before the encoder; the
//! transform is stored in the model, so callers always pass raw samples.
//! Everything is f64 and seeded, so training is bit-reproducible.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Condition, ExperimentDataset, SampleMatrix};
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::linalg;
use crate::rng::Rng;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Relative ridge added to the input covariance before factorization.
const WHITEN_RIDGE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NreTrainConfig {
    pub hidden_sizes: Vec<usize>,
    pub step_size: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for NreTrainConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![128, 64],
            step_size: 0.005,
            epochs: 500,
            batch_size: 1024,
            seed: 0,
        }
    }
}

impl NreTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArg(
                "hidden_sizes must be nonempty positive integers".into(),
            ));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidArg(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArg(
                "epochs and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Trainable parameters: hidden linear layers (ReLU after each) and one
/// embedding row per condition class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NreParams {
    /// Per-layer weights, shape in×out.
    pub layer_weights: Vec<Array2<f64>>,
    pub layer_biases: Vec<Array1<f64>>,
    /// Class embeddings, shape C×d where d is the encoder output size.
    pub class_w: Array2<f64>,
}

impl NreParams {
    /// Fan-in-scaled normal initialization for layer weights, zero biases,
    /// 1/√d-scaled rows for the class embeddings.
    pub fn init(dim: usize, hidden: &[usize], n_classes: usize, rng: &mut Rng) -> Self {
        let mut layer_weights = Vec::with_capacity(hidden.len());
        let mut layer_biases = Vec::with_capacity(hidden.len());
        let mut fan_in = dim;
        for &out in hidden {
            let sd = (2.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, out), |_| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            });
            layer_weights.push(w);
            layer_biases.push(Array1::zeros(out));
            fan_in = out;
        }
        let sd = (1.0 / fan_in as f64).sqrt();
        let class_w = Array2::from_shape_fn((n_classes, fan_in), |_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        });
        Self {
            layer_weights,
            layer_biases,
            class_w,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layer_weights: self
                .layer_weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            layer_biases: self
                .layer_biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
            class_w: Array2::zeros(self.class_w.raw_dim()),
        }
    }

    /// Flat mutable views over every trainable buffer, in a stable order
    /// (layer weights, layer biases, class embeddings). Used by the
    /// optimizer and by finite-difference gradient checks.
    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for w in &mut self.layer_weights {
            out.push(w.as_slice_mut().expect("standard layout"));
        }
        for b in &mut self.layer_biases {
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.class_w.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for w in &self.layer_weights {
            out.push(w.as_slice().expect("standard layout"));
        }
        for b in &self.layer_biases {
            out.push(b.as_slice().expect("standard layout"));
        }
        out.push(self.class_w.as_slice().expect("standard layout"));
        out
    }

    fn n_classes(&self) -> usize {
        self.class_w.nrows()
    }

    /// Encoder output for a batch of (already whitened) inputs.
    fn encode(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for (w, b) in self.layer_weights.iter().zip(&self.layer_biases) {
            let mut a = h.dot(w);
            a += b;
            a.mapv_inplace(|v| v.max(0.0));
            h = a;
        }
        h
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct ForwardCache {
    /// Pre-activations per layer.
    pre: Vec<Array2<f64>>,
    /// Post-activations; index 0 is the input, last is the encoding.
    act: Vec<Array2<f64>>,
}

fn forward_cached(params: &NreParams, x: ArrayView2<f64>) -> ForwardCache {
    let mut pre = Vec::with_capacity(params.layer_weights.len());
    let mut act = Vec::with_capacity(params.layer_weights.len() + 1);
    act.push(x.to_owned());
    for (w, b) in params.layer_weights.iter().zip(&params.layer_biases) {
        let mut a = act.last().expect("nonempty").dot(w);
        a += b;
        pre.push(a.clone());
        a.mapv_inplace(|v| v.max(0.0));
        act.push(a);
    }
    ForwardCache { pre, act }
}

fn check_batch(params: &NreParams, x: ArrayView2<f64>, pos: &[usize], neg: &[usize]) -> Result<()> {
    let b = x.nrows();
    if b == 0 {
        return Err(Error::InvalidArg("empty batch".into()));
    }
    if pos.len() != b || neg.len() != b {
        return Err(Error::InvalidArg(format!(
            "label vectors must match batch size {b}, got {} and {}",
            pos.len(),
            neg.len()
        )));
    }
    let c = params.n_classes();
    if pos.iter().chain(neg).any(|&k| k >= c) {
        return Err(Error::InvalidArg(format!(
            "class index out of range (model has {c} classes)"
        )));
    }
    if x.ncols() != params.layer_weights[0].nrows() {
        return Err(Error::InvalidArg(format!(
            "input dim {} does not match encoder input {}",
            x.ncols(),
            params.layer_weights[0].nrows()
        )));
    }
    Ok(())
}

/// Contrastive classification loss of a batch: `pos` are the true class
/// indices, `neg` the shuffled ones.
pub fn nre_loss(params: &NreParams, x: ArrayView2<f64>, pos: &[usize], neg: &[usize]) -> Result<f64> {
    check_batch(params, x, pos, neg)?;
    let enc = params.encode(x);
    let b = x.nrows();
    let mut total = 0.0;
    for r in 0..b {
        let e = enc.row(r);
        let f_pos = e.dot(&params.class_w.row(pos[r]));
        let f_neg = e.dot(&params.class_w.row(neg[r]));
        total += softplus(-f_pos) + softplus(f_neg);
    }
    Ok(total / (2.0 * b as f64))
}

/// Loss plus analytic gradients with respect to every parameter, shaped like
/// the parameters themselves.
pub fn nre_loss_grad(
    params: &NreParams,
    x: ArrayView2<f64>,
    pos: &[usize],
    neg: &[usize],
) -> Result<(f64, NreParams)> {
    check_batch(params, x, pos, neg)?;
    let b = x.nrows();
    let bf = b as f64;
    let cache = forward_cached(params, x);
    let enc = cache.act.last().expect("at least the input");
    let d_enc_dim = enc.ncols();

    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut d_enc = Array2::<f64>::zeros((b, d_enc_dim));
    for r in 0..b {
        let e = enc.row(r);
        let wp = params.class_w.row(pos[r]);
        let wn = params.class_w.row(neg[r]);
        let f_pos = e.dot(&wp);
        let f_neg = e.dot(&wn);
        loss += softplus(-f_pos) + softplus(f_neg);
        let dp = (sigmoid(f_pos) - 1.0) / (2.0 * bf);
        let dn = sigmoid(f_neg) / (2.0 * bf);
        {
            let mut gp = grads.class_w.row_mut(pos[r]);
            gp.scaled_add(dp, &e);
        }
        {
            let mut gn = grads.class_w.row_mut(neg[r]);
            gn.scaled_add(dn, &e);
        }
        let mut de = d_enc.row_mut(r);
        de.scaled_add(dp, &wp);
        de.scaled_add(dn, &wn);
    }
    loss /= 2.0 * bf;

    // Backpropagate through the hidden layers in reverse.
    let mut dh = d_enc;
    for l in (0..params.layer_weights.len()).rev() {
        let mut da = dh;
        da.zip_mut_with(&cache.pre[l], |d, &a| {
            if a <= 0.0 {
                *d = 0.0;
            }
        });
        grads.layer_weights[l] = cache.act[l].t().dot(&da);
        grads.layer_biases[l] = da.sum_axis(Axis(0));
        dh = da.dot(&params.layer_weights[l].t());
    }
    Ok((loss, grads))
}

struct Adam {
    t: i32,
    lr: f64,
    m: NreParams,
    v: NreParams,
}

impl Adam {
    fn new(lr: f64, shape: &NreParams) -> Self {
        Self {
            t: 0,
            lr,
            m: shape.zeros_like(),
            v: shape.zeros_like(),
        }
    }

    fn step(&mut self, params: &mut NreParams, grads: &NreParams) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        let gbufs = grads.buffers();
        for (((p, g), m), v) in params
            .buffers_mut()
            .into_iter()
            .zip(gbufs)
            .zip(self.m.buffers_mut())
            .zip(self.v.buffers_mut())
        {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Trained ratio model: input whitening, encoder, and class embeddings, with
/// the condition of each class row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioModel {
    version: u32,
    mean: Vec<f64>,
    /// Lower-triangular inverse Cholesky factor of the input covariance;
    /// whitened input is W·(x − mean).
    whiten: Array2<f64>,
    params: NreParams,
    /// Conditions in class-row order (canonical condition order).
    classes: Vec<Condition>,
}

const MODEL_VERSION: u32 = 1;

impl RatioModel {
    pub fn classes(&self) -> &[Condition] {
        &self.classes
    }

    pub fn class_index(&self, c: &Condition) -> Result<usize> {
        self.classes
            .binary_search(c)
            .map_err(|_| Error::InvalidArg(format!("condition {c} not in model")))
    }

    fn whiten_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let d = self.mean.len();
        if x.ncols() != d {
            return Err(Error::InvalidArg(format!(
                "input dim {} does not match model dim {d}",
                x.ncols()
            )));
        }
        let mut centered = x.to_owned();
        for mut row in centered.rows_mut() {
            for (v, mu) in row.iter_mut().zip(&self.mean) {
                *v -= mu;
            }
        }
        Ok(centered.dot(&self.whiten.t()))
    }

    /// Encoder output for raw (unwhitened) samples.
    pub fn encode_batch(&self, x: &SampleMatrix) -> Result<Array2<f64>> {
        Ok(self.params.encode(self.whiten_rows(x.data().view())?.view()))
    }

    /// Score f(x, c) for one raw sample.
    pub fn score(&self, x: &[f64], c: &Condition) -> Result<f64> {
        let k = self.class_index(c)?;
        let xv = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::InvalidArg(format!("bad sample shape: {e}")))?;
        let enc = self.params.encode(self.whiten_rows(xv)?.view());
        Ok(enc.row(0).dot(&self.params.class_w.row(k)))
    }

    /// log p(x|c_num) − log p(x|c_den), from f(x,c_num) − f(x,c_den).
    pub fn log_ratio(&self, x: &[f64], c_num: &Condition, c_den: &Condition) -> Result<f64> {
        Ok(self.score(x, c_num)? - self.score(x, c_den)?)
    }

    /// Batched log-ratios for every row of `xs`.
    pub fn log_ratios_batch(
        &self,
        xs: &SampleMatrix,
        c_num: &Condition,
        c_den: &Condition,
    ) -> Result<Vec<f64>> {
        let kn = self.class_index(c_num)?;
        let kd = self.class_index(c_den)?;
        let enc = self.encode_batch(xs)?;
        let diff = &self.params.class_w.row(kn) - &self.params.class_w.row(kd);
        Ok(enc.rows().into_iter().map(|r| r.dot(&diff)).collect())
    }

    /// Writes the model as versioned JSON (f64 values round-trip exactly).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text =
            serde_json::to_string(self).map_err(|e| Error::Validation(format!("model: {e}")))?;
        text.push('\n');
        atomic_write(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("model file {}: {e}", path.display())))?;
        if model.version != MODEL_VERSION {
            return Err(Error::Validation(format!(
                "model file {} has version {}, expected {MODEL_VERSION}",
                path.display(),
                model.version
            )));
        }
        Ok(model)
    }
}

/// Stacks every condition's samples with class labels in canonical
/// condition order.
fn stack_dataset(ds: &ExperimentDataset) -> (Array2<f64>, Vec<usize>, Vec<Condition>) {
    let classes: Vec<Condition> = ds.conditions().map(|(c, _)| *c).collect();
    let total: usize = ds.conditions().map(|(_, s)| s.n_samples()).sum();
    let d = ds.dim();
    let mut x = Array2::<f64>::zeros((total, d));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (k, (_, samples)) in ds.conditions().enumerate() {
        let n = samples.n_samples();
        x.slice_mut(ndarray::s![row..row + n, ..])
            .assign(samples.data());
        labels.extend(std::iter::repeat(k).take(n));
        row += n;
    }
    (x, labels, classes)
}

/// Whitening transform of a data matrix: column means plus the inverse
/// Cholesky factor of the (ridged) covariance.
fn whitening(x: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = x.nrows();
    let d = x.ncols();
    if n < 2 {
        return Err(Error::InvalidArg("whitening needs at least 2 rows".into()));
    }
    let mean: Vec<f64> = (0..d).map(|c| x.column(c).sum() / n as f64).collect();
    let mut centered = x.clone();
    for mut row in centered.rows_mut() {
        for (v, mu) in row.iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    let mut cov = centered.t().dot(&centered) / (n - 1) as f64;
    let trace: f64 = (0..d).map(|i| cov[(i, i)]).sum();
    let ridge = WHITEN_RIDGE * trace / d as f64;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    let l = linalg::cholesky(&cov)
        .map_err(|e| Error::Numeric(format!("input covariance not factorizable: {e}")))?;
    Ok((mean, linalg::invert_lower(&l)))
}

/// Trains a ratio model on every condition of the dataset.
///
/// Batches are drawn by shuffling the pooled (sample, condition) pairs each
/// epoch and dropping the final partial chunk; negatives reshuffle the class
/// labels within each batch. Mean epoch loss is logged at debug level.
pub fn nre_train(
    ds: &ExperimentDataset,
    config: &NreTrainConfig,
    rng: &mut Rng,
) -> Result<RatioModel> {
    config.validate()?;
    let (x, labels, classes) = stack_dataset(ds);
    let n = x.nrows();
    if n < config.batch_size {
        return Err(Error::InvalidArg(format!(
            "dataset has {n} samples, fewer than batch_size {}",
            config.batch_size
        )));
    }
    let (mean, whiten) = whitening(&x)?;
    let mut xw = x;
    for mut row in xw.rows_mut() {
        for (v, mu) in row.iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    let xw = xw.dot(&whiten.t());

    let mut params = NreParams::init(ds.dim(), &config.hidden_sizes, classes.len(), rng);
    let mut adam = Adam::new(config.step_size, &params);
    let b = config.batch_size;
    let mut order: Vec<usize> = (0..n).collect();
    let mut perm: Vec<usize> = (0..b).collect();
    let mut xb = Array2::<f64>::zeros((b, xw.ncols()));

    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks_exact(b) {
            for (r, &i) in chunk.iter().enumerate() {
                xb.row_mut(r).assign(&xw.row(i));
            }
            let pos: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            perm.shuffle(rng);
            let neg: Vec<usize> = perm.iter().map(|&r| pos[r]).collect();
            let (loss, grads) = nre_loss_grad(&params, xb.view(), &pos, &neg)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            adam.step(&mut params, &grads);
            epoch_loss += loss;
            steps += 1;
        }
        log::debug!(
            "ratio training epoch {epoch}: mean batch loss {:.6}",
            epoch_loss / steps.max(1) as f64
        );
    }

    Ok(RatioModel {
        version: MODEL_VERSION,
        mean,
        whiten,
        params,
        classes,
    })
}

/// Fraction of dataset samples whose condition is the argmax of f(x, ·)
/// (ties broken toward the lowest class row). Chance level is 1/C.
pub fn multiclass_accuracy(model: &RatioModel, ds: &ExperimentDataset) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (cond, samples) in ds.conditions() {
        let k = model.class_index(cond)?;
        let enc = model.encode_batch(samples)?;
        let scores = enc.dot(&model.params.class_w.t());
        for row in scores.rows() {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (c, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            correct += usize::from(best == k);
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}
