//! Feed-forward embedder trained on first-pass labels.
//!
//! Architecture: input -> hidden1 (tanh) -> hidden2 (linear) -> softmax
//! output, cross-entropy loss, plain minibatch SGD. The penultimate
//! (linear) layer's activations are the latent features consumed by the
//! second clustering pass, so `forward` returns them alongside the logits.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::matrix::Matrix;
use crate::parallel;

/// Gradient accumulation chunk: fixed so the reduction tree is independent
/// of thread count.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(output_dim: usize) -> Self {
        NetworkSpec {
            input_dim: 19,
            hidden1: 30,
            hidden2: 16,
            output_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub recordings_seen: u64,
    pub total_epochs: u64,
    /// Content id of the parent checkpoint, or `"xavier"` for a fresh init.
    pub created_from: String,
    pub rng_seed: u64,
}

/// Immutable value holding every layer's weights; training produces a new
/// checkpoint rather than mutating one in place.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    /// hidden1 × input
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// hidden2 × hidden1
    pub w2: Matrix,
    pub b2: Vec<f64>,
    /// output × hidden2
    pub w3: Matrix,
    pub b3: Vec<f64>,
    pub meta: CheckpointMeta,
}

impl ModelCheckpoint {
    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            input_dim: self.w1.cols(),
            hidden1: self.w1.rows(),
            hidden2: self.w2.rows(),
            output_dim: self.w3.rows(),
        }
    }

    /// FNV-1a over the raw weight bytes; stable content identity.
    pub fn content_id(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |vals: &[f64]| {
            for v in vals {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        };
        eat(self.w1.data());
        eat(&self.b1);
        eat(self.w2.data());
        eat(&self.b2);
        eat(self.w3.data());
        eat(&self.b3);
        format!("{h:016x}")
    }

    pub fn num_params(&self) -> usize {
        self.w1.data().len()
            + self.b1.len()
            + self.w2.data().len()
            + self.b2.len()
            + self.w3.data().len()
            + self.b3.len()
    }
}

/// Labeled training frames. Class ids are compact (`0..num_labels`) and
/// every class is guaranteed at least one sample.
#[derive(Debug, Clone)]
pub struct TrainBatchSet {
    pub inputs: Matrix,
    pub targets: Vec<usize>,
    pub num_labels: usize,
}

impl TrainBatchSet {
    pub fn new(inputs: Matrix, targets: Vec<usize>, num_labels: usize) -> Result<Self> {
        if inputs.rows() != targets.len() {
            return Err(Error::invalid(format!(
                "{} inputs vs {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        if num_labels == 0 || targets.is_empty() {
            return Err(Error::invalid("training set needs at least one labeled frame"));
        }
        let mut seen = vec![false; num_labels];
        for &t in &targets {
            if t >= num_labels {
                return Err(Error::invalid(format!(
                    "target {t} out of range for {num_labels} labels"
                )));
            }
            seen[t] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::invalid(format!("class {missing} has no samples")));
        }
        Ok(TrainBatchSet {
            inputs,
            targets,
            num_labels,
        })
    }

    /// Build a training set from per-frame cluster labels, compacting the
    /// cluster ids to `0..L` (ascending). Frames within
    /// `exclude_boundary_s` of a label change can be dropped to reduce
    /// label noise; fails if that empties a class.
    ///
    /// Returns the batch set plus the class -> cluster-id mapping.
    pub fn from_labeled_frames(
        feat: &FeatureMatrix,
        labels: &[usize],
        exclude_boundary_s: Option<f64>,
    ) -> Result<(Self, Vec<usize>)> {
        if feat.num_frames() != labels.len() {
            return Err(Error::invalid("feature/label length mismatch"));
        }
        let mut classes: Vec<usize> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let class_of = |id: usize| classes.binary_search(&id).unwrap();

        let keep: Vec<usize> = match exclude_boundary_s {
            None => (0..labels.len()).collect(),
            Some(margin_s) => {
                let margin = (margin_s / feat.frame_shift_s).round() as usize;
                (0..labels.len())
                    .filter(|&i| {
                        let lo = i.saturating_sub(margin);
                        let hi = (i + margin).min(labels.len() - 1);
                        (lo..=hi).all(|j| labels[j] == labels[i])
                    })
                    .collect()
            }
        };
        if keep.is_empty() {
            return Err(Error::invalid("boundary exclusion removed every frame"));
        }
        let inputs = feat.frames.select_rows(&keep);
        let targets: Vec<usize> = keep.iter().map(|&i| class_of(labels[i])).collect();
        let set = TrainBatchSet::new(inputs, targets, classes.len()).map_err(|e| {
            Error::invalid(format!("after boundary exclusion: {e}"))
        })?;
        Ok((set, classes))
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Epochs without meaningful improvement tolerated before stopping.
    pub patience: usize,
    /// Improvement below this does not reset the patience counter.
    pub min_delta: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            patience: 5,
            min_delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    /// Epoch cap.
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub early_stop: Option<EarlyStop>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            epochs: 50,
            learning_rate: 0.01,
            batch_size: 256,
            shuffle_seed: 0,
            early_stop: Some(EarlyStop::default()),
        }
    }
}

/// Xavier uniform init: weights in ±sqrt(6/(fan_in+fan_out)), zero biases.
pub fn xavier_init(spec: &NetworkSpec, seed: u64) -> ModelCheckpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = |rows: usize, cols: usize| -> Matrix {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Matrix::from_vec(rows, cols, data)
    };
    let w1 = layer(spec.hidden1, spec.input_dim);
    let w2 = layer(spec.hidden2, spec.hidden1);
    let w3 = layer(spec.output_dim, spec.hidden2);
    ModelCheckpoint {
        w1,
        b1: vec![0.0; spec.hidden1],
        w2,
        b2: vec![0.0; spec.hidden2],
        w3,
        b3: vec![0.0; spec.output_dim],
        meta: CheckpointMeta {
            recordings_seen: 0,
            total_epochs: 0,
            created_from: "xavier".to_string(),
            rng_seed: seed,
        },
    }
}

fn affine(w: &Matrix, b: &[f64], x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = w.row(r);
        let mut acc = b[r];
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *o = acc;
    }
}

/// One sample's activations.
struct Activation {
    h1: Vec<f64>,
    latent: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_one(ckpt: &ModelCheckpoint, x: &[f64]) -> Activation {
    let spec = ckpt.spec();
    let mut z1 = vec![0.0; spec.hidden1];
    affine(&ckpt.w1, &ckpt.b1, x, &mut z1);
    for v in &mut z1 {
        *v = v.tanh();
    }
    let mut latent = vec![0.0; spec.hidden2];
    affine(&ckpt.w2, &ckpt.b2, &z1, &mut latent);
    let mut logits = vec![0.0; spec.output_dim];
    affine(&ckpt.w3, &ckpt.b3, &latent, &mut logits);
    Activation {
        h1: z1,
        latent,
        logits,
    }
}

/// Single-frame forward pass: (latent, logits) for one input vector.
pub fn forward_row(ckpt: &ModelCheckpoint, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a = forward_one(ckpt, x);
    (a.latent, a.logits)
}

/// Batched forward pass: penultimate-layer latents (T × hidden2) and
/// logits (T × output_dim).
pub fn forward(ckpt: &ModelCheckpoint, inputs: &Matrix) -> Result<(Matrix, Matrix)> {
    if inputs.cols() != ckpt.w1.cols() {
        return Err(Error::invalid(format!(
            "input dim {} does not match network input {}",
            inputs.cols(),
            ckpt.w1.cols()
        )));
    }
    let acts = parallel::map_indexed(inputs.rows(), |i| {
        let a = forward_one(ckpt, inputs.row(i));
        (a.latent, a.logits)
    });
    let latents: Vec<Vec<f64>> = acts.iter().map(|(l, _)| l.clone()).collect();
    let logits: Vec<Vec<f64>> = acts.into_iter().map(|(_, lg)| lg).collect();
    Ok((Matrix::from_rows(&latents), Matrix::from_rows(&logits)))
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy of the checkpoint on a labeled set.
pub fn mean_cross_entropy(ckpt: &ModelCheckpoint, data: &TrainBatchSet) -> f64 {
    let losses = parallel::map_indexed(data.len(), |i| {
        let a = forward_one(ckpt, data.inputs.row(i));
        log_sum_exp(&a.logits) - a.logits[data.targets[i]]
    });
    losses.iter().sum::<f64>() / data.len() as f64
}

/// Flat gradient buffer in checkpoint layout order
/// (w1, b1, w2, b2, w3, b3).
struct GradBuf {
    g: Vec<f64>,
}

impl GradBuf {
    fn zeros(n: usize) -> Self {
        GradBuf { g: vec![0.0; n] }
    }

    fn add(&mut self, other: &GradBuf) {
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            *a += b;
        }
    }
}

pub(crate) fn flatten_params(ckpt: &ModelCheckpoint) -> Vec<f64> {
    let mut v = Vec::with_capacity(ckpt.num_params());
    v.extend_from_slice(ckpt.w1.data());
    v.extend_from_slice(&ckpt.b1);
    v.extend_from_slice(ckpt.w2.data());
    v.extend_from_slice(&ckpt.b2);
    v.extend_from_slice(ckpt.w3.data());
    v.extend_from_slice(&ckpt.b3);
    v
}

pub(crate) fn unflatten_params(ckpt: &mut ModelCheckpoint, flat: &[f64]) {
    let mut off = 0;
    let mut take = |dst: &mut [f64]| {
        dst.copy_from_slice(&flat[off..off + dst.len()]);
        off += dst.len();
    };
    take(ckpt.w1.data_mut());
    take(&mut ckpt.b1);
    take(ckpt.w2.data_mut());
    take(&mut ckpt.b2);
    take(ckpt.w3.data_mut());
    take(&mut ckpt.b3);
}

/// Summed (not averaged) gradient of the cross-entropy over the given
/// sample indices, plus the summed loss.
fn grad_sum(ckpt: &ModelCheckpoint, data: &TrainBatchSet, idx: &[usize]) -> (GradBuf, f64) {
    let spec = ckpt.spec();
    let (ni, h1n, h2n, ln) = (spec.input_dim, spec.hidden1, spec.hidden2, spec.output_dim);
    let o_w1 = 0;
    let o_b1 = o_w1 + h1n * ni;
    let o_w2 = o_b1 + h1n;
    let o_b2 = o_w2 + h2n * h1n;
    let o_w3 = o_b2 + h2n;
    let o_b3 = o_w3 + ln * h2n;
    let total = o_b3 + ln;

    let mut buf = GradBuf::zeros(total);
    let mut loss = 0.0;
    for &i in idx {
        let x = data.inputs.row(i);
        let target = data.targets[i];
        let act = forward_one(ckpt, x);
        loss += log_sum_exp(&act.logits) - act.logits[target];

        let mut dlogits = softmax(&act.logits);
        dlogits[target] -= 1.0;

        // Output layer.
        for (o, &dv) in dlogits.iter().enumerate() {
            buf.g[o_b3 + o] += dv;
            let row = &mut buf.g[o_w3 + o * h2n..o_w3 + (o + 1) * h2n];
            for (g, &lv) in row.iter_mut().zip(&act.latent) {
                *g += dv * lv;
            }
        }
        // d latent = W3^T dlogits
        let mut dlatent = vec![0.0; h2n];
        for (o, &dv) in dlogits.iter().enumerate() {
            for (dl, &wv) in dlatent.iter_mut().zip(ckpt.w3.row(o)) {
                *dl += dv * wv;
            }
        }
        // Linear hidden layer.
        for (r, &dv) in dlatent.iter().enumerate() {
            buf.g[o_b2 + r] += dv;
            let row = &mut buf.g[o_w2 + r * h1n..o_w2 + (r + 1) * h1n];
            for (g, &hv) in row.iter_mut().zip(&act.h1) {
                *g += dv * hv;
            }
        }
        // d h1 = W2^T dlatent, through tanh.
        let mut dz1 = vec![0.0; h1n];
        for (r, &dv) in dlatent.iter().enumerate() {
            for (dz, &wv) in dz1.iter_mut().zip(ckpt.w2.row(r)) {
                *dz += dv * wv;
            }
        }
        for (dz, &hv) in dz1.iter_mut().zip(&act.h1) {
            *dz *= 1.0 - hv * hv;
        }
        for (r, &dv) in dz1.iter().enumerate() {
            buf.g[o_b1 + r] += dv;
            let row = &mut buf.g[o_w1 + r * ni..o_w1 + (r + 1) * ni];
            for (g, &xv) in row.iter_mut().zip(x) {
                *g += dv * xv;
            }
        }
    }
    (buf, loss)
}

/// Mean gradient over the whole set, flattened in checkpoint layout.
pub fn analytic_gradient(ckpt: &ModelCheckpoint, data: &TrainBatchSet) -> Vec<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let chunks = parallel::map_chunks(&idx, GRAD_CHUNK, |c| grad_sum(ckpt, data, c));
    let mut total = GradBuf::zeros(ckpt.num_params());
    for (g, _) in &chunks {
        total.add(g);
    }
    let n = data.len() as f64;
    total.g.iter().map(|v| v / n).collect()
}

/// Central-difference gradient of the mean cross-entropy.
pub fn numeric_gradient(ckpt: &ModelCheckpoint, data: &TrainBatchSet, h: f64) -> Vec<f64> {
    let base = flatten_params(ckpt);
    let mut probe = ckpt.clone();
    (0..base.len())
        .map(|p| {
            let mut params = base.clone();
            params[p] = base[p] + h;
            unflatten_params(&mut probe, &params);
            let up = mean_cross_entropy(&probe, data);
            params[p] = base[p] - h;
            unflatten_params(&mut probe, &params);
            let down = mean_cross_entropy(&probe, data);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Elementwise relative error, floored so that finite-difference noise on
/// near-zero gradients does not dominate.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

/// Analytic vs central finite differences (h = 1e-5) over all parameters;
/// returns the max relative error.
pub fn gradient_check(ckpt: &ModelCheckpoint, data: &TrainBatchSet) -> f64 {
    let analytic = analytic_gradient(ckpt, data);
    let numeric = numeric_gradient(ckpt, data, 1e-5);
    max_relative_error(&analytic, &numeric)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    /// Mean cross-entropy per epoch, evaluated as the running average of
    /// pre-update batch losses.
    pub epoch_losses: Vec<f64>,
    pub epochs_run: usize,
}

/// Minibatch SGD with a seeded shuffle. Deterministic for fixed seeds:
/// batches accumulate per fixed-size chunk and fold in order.
pub fn train(
    ckpt: &ModelCheckpoint,
    data: &TrainBatchSet,
    cfg: &SgdConfig,
) -> Result<TrainOutcome> {
    if ckpt.w3.rows() != data.num_labels {
        return Err(Error::invalid(format!(
            "network has {} outputs but data has {} labels",
            ckpt.w3.rows(),
            data.num_labels
        )));
    }
    if ckpt.w1.cols() != data.inputs.cols() {
        return Err(Error::invalid("input dimension mismatch"));
    }
    let mut out = ckpt.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut best = f64::INFINITY;
    let mut bad_epochs = 0usize;
    let batch = cfg.batch_size.max(1);

    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch_idx in order.chunks(batch) {
            let chunks = parallel::map_chunks(batch_idx, GRAD_CHUNK, |c| grad_sum(&out, data, c));
            let mut grad = GradBuf::zeros(out.num_params());
            let mut loss = 0.0;
            for (g, l) in &chunks {
                grad.add(g);
                loss += l;
            }
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch} (lr={}, batch={})",
                    cfg.learning_rate, batch
                )));
            }
            epoch_loss += loss;
            let scale = cfg.learning_rate / batch_idx.len() as f64;
            let mut params = flatten_params(&out);
            for (p, g) in params.iter_mut().zip(&grad.g) {
                *p -= scale * g;
            }
            unflatten_params(&mut out, &params);
        }
        epochs_run = epoch + 1;
        let epoch_loss = epoch_loss / data.len() as f64;
        epoch_losses.push(epoch_loss);

        if let Some(es) = &cfg.early_stop {
            if epoch_loss < best - es.min_delta {
                best = epoch_loss;
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
                if bad_epochs >= es.patience {
                    break;
                }
            }
        }
    }
    out.meta.total_epochs += epochs_run as u64;
    Ok(TrainOutcome {
        checkpoint: out,
        epoch_losses,
        epochs_run,
    })
}

/// Transfer the hidden layers from `seed`, re-initialize the output layer
/// for `l_new` labels (Xavier, seeded), then fine-tune.
///
/// With `cfg.epochs == 0` the transferred weights are returned untouched.
pub fn fine_tune(
    seed: &ModelCheckpoint,
    l_new: usize,
    data: &TrainBatchSet,
    init_seed: u64,
    cfg: &SgdConfig,
) -> Result<TrainOutcome> {
    if data.num_labels != l_new {
        return Err(Error::invalid(format!(
            "l_new={l_new} but data has {} labels",
            data.num_labels
        )));
    }
    if seed.w1.cols() != data.inputs.cols()
        || seed.w2.cols() != seed.w1.rows()
        || seed.w2.rows() != seed.b2.len()
    {
        return Err(Error::invalid("incompatible seed checkpoint"));
    }
    let spec = NetworkSpec {
        input_dim: seed.w1.cols(),
        hidden1: seed.w1.rows(),
        hidden2: seed.w2.rows(),
        output_dim: l_new,
    };
    let fresh = xavier_init(&spec, init_seed);
    let start = ModelCheckpoint {
        w1: seed.w1.clone(),
        b1: seed.b1.clone(),
        w2: seed.w2.clone(),
        b2: seed.b2.clone(),
        w3: fresh.w3,
        b3: fresh.b3,
        meta: CheckpointMeta {
            recordings_seen: seed.meta.recordings_seen + 1,
            total_epochs: seed.meta.total_epochs,
            created_from: seed.content_id(),
            rng_seed: init_seed,
        },
    };
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            checkpoint: start,
            epoch_losses: Vec::new(),
            epochs_run: 0,
        });
    }
    train(&start, data, cfg)
}

const CKPT_MAGIC: &[u8; 4] = b"DZC1";

/// Versioned binary container: magic, version, shapes, row-major f64
/// weights, then a JSON metadata block. Round trips are bit-exact.
pub fn save_checkpoint(path: &Path, ckpt: &ModelCheckpoint) -> Result<()> {
    let spec = ckpt.spec();
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&1u32.to_le_bytes());
    for d in [spec.input_dim, spec.hidden1, spec.hidden2, spec.output_dim] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in flatten_params(ckpt) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let meta = serde_json::to_vec(&ckpt.meta)
        .map_err(|e| Error::format(format!("meta encode: {e}")))?;
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 24 || &bytes[0..4] != CKPT_MAGIC {
        return Err(Error::format(format!(
            "{}: not a network checkpoint",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != 1 {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (ni, h1, h2, out) = (dim(0), dim(1), dim(2), dim(3));
    let n_params = h1 * ni + h1 + h2 * h1 + h2 + out * h2 + out;
    let weights_end = 24 + 8 * n_params;
    if bytes.len() < weights_end + 4 {
        return Err(Error::format("truncated checkpoint".to_string()));
    }
    let mut flat = Vec::with_capacity(n_params);
    for ch in bytes[24..weights_end].chunks_exact(8) {
        flat.push(f64::from_le_bytes(ch.try_into().unwrap()));
    }
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("checkpoint contains non-finite weights".to_string()));
    }
    let meta_len =
        u32::from_le_bytes(bytes[weights_end..weights_end + 4].try_into().unwrap()) as usize;
    if bytes.len() != weights_end + 4 + meta_len {
        return Err(Error::format("checkpoint metadata length mismatch".to_string()));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[weights_end + 4..])
        .map_err(|e| Error::format(format!("meta decode: {e}")))?;
    let mut ckpt = ModelCheckpoint {
        w1: Matrix::zeros(h1, ni),
        b1: vec![0.0; h1],
        w2: Matrix::zeros(h2, h1),
        b2: vec![0.0; h2],
        w3: Matrix::zeros(out, h2),
        b3: vec![0.0; out],
        meta,
    };
    unflatten_params(&mut ckpt, &flat);
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use rand_distr::{Distribution, Normal};

    fn toy_spec() -> NetworkSpec {
        NetworkSpec {
            input_dim: 2,
            hidden1: 3,
            hidden2: 2,
            output_dim: 2,
        }
    }

    fn blob_data(n_per: usize, offset: f64, dim: usize, seed: u64) -> TrainBatchSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for class in 0..2usize {
            let center = if class == 0 { -offset } else { offset };
            for _ in 0..n_per {
                rows.push(
                    (0..dim)
                        .map(|_| center + normal.sample(&mut rng))
                        .collect::<Vec<f64>>(),
                );
                targets.push(class);
            }
        }
        TrainBatchSet::new(Matrix::from_rows(&rows), targets, 2).unwrap()
    }

    fn accuracy(ckpt: &ModelCheckpoint, data: &TrainBatchSet) -> f64 {
        let (_, logits) = forward(ckpt, &data.inputs).unwrap();
        let mut correct = 0;
        for (i, &t) in data.targets.iter().enumerate() {
            let row = logits.row(i);
            let pred = (0..row.len())
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            if pred == t {
                correct += 1;
            }
        }
        correct as f64 / data.len() as f64
    }

    #[test]
    fn xavier_bound_and_determinism() {
        let spec = NetworkSpec::new(4);
        let ckpt = xavier_init(&spec, 7);
        let bound = (6.0 / 49.0_f64).sqrt();
        assert!((bound - 0.3499271).abs() < 1e-6);
        for &w in ckpt.w1.data() {
            assert!(w.abs() <= bound);
        }
        assert!(ckpt.b1.iter().all(|&b| b == 0.0));
        assert!(ckpt.b2.iter().all(|&b| b == 0.0));
        assert!(ckpt.b3.iter().all(|&b| b == 0.0));
        let again = xavier_init(&spec, 7);
        assert_eq!(ckpt, again);
        assert_ne!(ckpt, xavier_init(&spec, 8));
    }

    #[test]
    fn forward_zero_network_gives_uniform_softmax() {
        let spec = toy_spec();
        let mut ckpt = xavier_init(&spec, 1);
        for v in ckpt.w1.data_mut() {
            *v = 0.0;
        }
        for v in ckpt.w2.data_mut() {
            *v = 0.0;
        }
        for v in ckpt.w3.data_mut() {
            *v = 0.0;
        }
        let inputs = Matrix::from_rows(&[vec![1.0, -2.0]]);
        let (latent, logits) = forward(&ckpt, &inputs).unwrap();
        assert!(latent.data().iter().all(|&v| v == 0.0));
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let p = softmax(logits.row(0));
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn forward_matches_hand_computation() {
        let mut ckpt = xavier_init(
            &NetworkSpec {
                input_dim: 2,
                hidden1: 2,
                hidden2: 2,
                output_dim: 2,
            },
            0,
        );
        ckpt.w1 = Matrix::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.4]]);
        ckpt.b1 = vec![0.05, -0.05];
        ckpt.w2 = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 0.25]]);
        ckpt.b2 = vec![0.0, 0.1];
        ckpt.w3 = Matrix::from_rows(&[vec![0.2, -0.2], vec![-0.1, 0.3]]);
        ckpt.b3 = vec![0.01, -0.02];
        let x = [1.0, -0.5];
        let (latent, logits) = forward(&ckpt, &Matrix::from_rows(&[x.to_vec()])).unwrap();

        let h0 = (0.1 * 1.0 + 0.2 * -0.5 + 0.05_f64).tanh();
        let h1 = (-0.3 * 1.0 + 0.4 * -0.5 - 0.05_f64).tanh();
        let l0 = h0 - h1;
        let l1 = 0.5 * h0 + 0.25 * h1 + 0.1;
        assert!((latent[(0, 0)] - l0).abs() < 1e-12);
        assert!((latent[(0, 1)] - l1).abs() < 1e-12);
        assert!((logits[(0, 0)] - (0.2 * l0 - 0.2 * l1 + 0.01)).abs() < 1e-12);
        assert!((logits[(0, 1)] - (-0.1 * l0 + 0.3 * l1 - 0.02)).abs() < 1e-12);
    }

    #[test]
    fn latent_ignores_output_layer() {
        let spec = toy_spec();
        let mut ckpt = xavier_init(&spec, 3);
        let inputs = Matrix::from_rows(&[vec![0.4, -1.1], vec![2.0, 0.3]]);
        let (latent_a, _) = forward(&ckpt, &inputs).unwrap();
        for v in ckpt.w3.data_mut() {
            *v += 5.0;
        }
        ckpt.b3[0] -= 2.0;
        let (latent_b, _) = forward(&ckpt, &inputs).unwrap();
        assert_eq!(latent_a, latent_b);
    }

    #[test]
    fn loss_is_ln_l_under_uniform_predictions() {
        let data = blob_data(16, 1.0, 2, 5);
        let spec = toy_spec();
        let mut ckpt = xavier_init(&spec, 2);
        for v in ckpt.w3.data_mut() {
            *v = 0.0;
        }
        let loss = mean_cross_entropy(&ckpt, &data);
        assert!((loss - (2.0_f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let data = blob_data(100, 3.0, 2, 11);
        let ckpt = xavier_init(&toy_spec(), 4);
        let cfg = SgdConfig {
            epochs: 50,
            batch_size: 32,
            ..SgdConfig::default()
        };
        let out = train(&ckpt, &data, &cfg).unwrap();
        assert!(out.epochs_run <= 50);
        assert!(
            accuracy(&out.checkpoint, &data) >= 0.99,
            "accuracy {}",
            accuracy(&out.checkpoint, &data)
        );
    }

    #[test]
    fn zero_learning_rate_keeps_checkpoint_bits() {
        let data = blob_data(20, 1.0, 2, 6);
        let ckpt = xavier_init(&toy_spec(), 9);
        let cfg = SgdConfig {
            epochs: 3,
            learning_rate: 0.0,
            early_stop: None,
            ..SgdConfig::default()
        };
        let out = train(&ckpt, &data, &cfg).unwrap();
        assert_eq!(flatten_params(&ckpt), flatten_params(&out.checkpoint));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = blob_data(50, 2.0, 2, 13);
        let ckpt = xavier_init(&toy_spec(), 1);
        let cfg = SgdConfig {
            epochs: 5,
            batch_size: 16,
            ..SgdConfig::default()
        };
        let a = train(&ckpt, &data, &cfg).unwrap();
        let b = train(&ckpt, &data, &cfg).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn gradient_check_small_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for seed in 0..3u64 {
            let spec = NetworkSpec {
                input_dim: 2,
                hidden1: 3,
                hidden2: 2,
                output_dim: 2,
            };
            let ckpt = xavier_init(&spec, seed);
            let rows: Vec<Vec<f64>> = (0..8)
                .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let targets: Vec<usize> = (0..8).map(|i| i % 2).collect();
            let data = TrainBatchSet::new(Matrix::from_rows(&rows), targets, 2).unwrap();
            let err = gradient_check(&ckpt, &data);
            assert!(err < 1e-5, "seed {seed}: gradient error {err}");
        }
    }

    #[test]
    fn perturbed_gradient_is_detected() {
        let spec = toy_spec();
        let ckpt = xavier_init(&spec, 23);
        let data = blob_data(8, 1.0, 2, 23);
        let mut analytic = analytic_gradient(&ckpt, &data);
        let numeric = numeric_gradient(&ckpt, &data, 1e-5);
        assert!(max_relative_error(&analytic, &numeric) < 1e-5);
        // 1% fault injection relative to the gradient scale.
        let scale = analytic.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
        for g in &mut analytic {
            *g += 0.01 * scale;
        }
        let err = max_relative_error(&analytic, &numeric);
        assert!(err > 1e-2, "fault not detected: {err}");
    }

    #[test]
    fn zero_gradient_point_agrees_near_zero() {
        // All-zero weights, balanced classes, symmetric data.
        let spec = toy_spec();
        let mut ckpt = xavier_init(&spec, 0);
        let zeros = vec![0.0; ckpt.num_params()];
        unflatten_params(&mut ckpt, &zeros);
        let rows = vec![vec![1.0, 0.5], vec![-1.0, -0.5], vec![0.2, -0.7], vec![-0.2, 0.7]];
        let data =
            TrainBatchSet::new(Matrix::from_rows(&rows), vec![0, 1, 0, 1], 2).unwrap();
        let analytic = analytic_gradient(&ckpt, &data);
        let numeric = numeric_gradient(&ckpt, &data, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(a.abs() < 1e-8 && n.abs() < 1e-8);
        }
    }

    #[test]
    fn fine_tune_preserves_latents_before_sgd() {
        let seed_spec = NetworkSpec {
            input_dim: 2,
            hidden1: 3,
            hidden2: 2,
            output_dim: 4,
        };
        let seed = xavier_init(&seed_spec, 31);
        let data = blob_data(10, 1.0, 2, 31);
        let cfg = SgdConfig {
            epochs: 0,
            ..SgdConfig::default()
        };
        // L changes from 4 to 2 without error.
        let out = fine_tune(&seed, 2, &data, 99, &cfg).unwrap();
        assert_eq!(out.checkpoint.w3.rows(), 2);
        assert_eq!(out.checkpoint.w1, seed.w1);
        assert_eq!(out.checkpoint.b1, seed.b1);
        assert_eq!(out.checkpoint.w2, seed.w2);
        assert_eq!(out.checkpoint.b2, seed.b2);
        let inputs = Matrix::from_rows(&[vec![0.3, -0.4]]);
        let (la, _) = forward(&seed, &inputs).unwrap();
        let (lb, _) = forward(&out.checkpoint, &inputs).unwrap();
        assert_eq!(la, lb);
        assert_eq!(out.checkpoint.meta.created_from, seed.content_id());
        assert_eq!(out.checkpoint.meta.recordings_seen, 1);
    }

    #[test]
    fn fine_tune_rejects_hidden_mismatch() {
        let seed = xavier_init(
            &NetworkSpec {
                input_dim: 3,
                hidden1: 4,
                hidden2: 2,
                output_dim: 2,
            },
            0,
        );
        let data = blob_data(5, 1.0, 2, 0);
        let err = fine_tune(&seed, 2, &data, 0, &SgdConfig::default()).unwrap_err();
        assert!(err.to_string().contains("incompatible seed checkpoint"));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let row: Vec<f64> = (0..5).map(|_| rng.random_range(-30.0..30.0)).collect();
            let p = softmax(&row);
            let s: f64 = p.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.dzc");
        let ckpt = xavier_init(&NetworkSpec::new(5), 77);
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt, loaded);
        assert_eq!(ckpt.content_id(), loaded.content_id());
    }

    #[test]
    fn train_batch_set_validation() {
        let m = Matrix::from_rows(&[vec![0.0], vec![1.0]]);
        assert!(TrainBatchSet::new(m.clone(), vec![0, 2], 2).is_err());
        assert!(TrainBatchSet::new(m.clone(), vec![0, 0], 2).is_err()); // class 1 empty
        assert!(TrainBatchSet::new(m, vec![0, 1], 2).is_ok());
    }

    #[test]
    fn boundary_exclusion_drops_edge_frames() {
        let m = Matrix::from_rows(&(0..20).map(|i| vec![i as f64]).collect::<Vec<_>>());
        let feat = crate::features::FeatureMatrix::new(m, 0.01, 0.025, FeatureKind::Mfcc).unwrap();
        let labels: Vec<usize> = (0..20).map(|i| if i < 10 { 5 } else { 9 }).collect();
        let (set, classes) =
            TrainBatchSet::from_labeled_frames(&feat, &labels, Some(0.02)).unwrap();
        assert_eq!(classes, vec![5, 9]);
        // Frames 8..12 are within 2 frames of the boundary.
        assert_eq!(set.len(), 16);
        assert!(set.targets.iter().filter(|&&t| t == 0).count() == 8);
    }
}
