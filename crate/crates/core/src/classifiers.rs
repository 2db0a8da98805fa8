//! Label predictors: linear models with exact margin geometry and a small
//! trainable multilayer perceptron.
//!
//! The MLP is deliberately self-contained: dense layers, rectifier hidden
//! activations, softmax cross-entropy, minibatch gradient descent. Batched
//! forward/backward kernels parallelize over independent output rows with
//! fixed-order inner sums, so results are bit-identical for any thread
//! count. All randomness (init, shuffling) is drawn from counter-based
//! streams keyed by the training seed.

use crate::distributions::{stream_index, LabeledSampler, RngStream, StreamDomain};
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("input has dimension {got}, classifier expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("linear classifier weight vector must be non-zero")]
    ZeroWeights,
    #[error("training set is empty or inconsistent")]
    BadTrainingSet,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error(transparent)]
    Sampler(#[from] crate::distributions::DistributionError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes {0:?}, expected \"NFLM\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("layer dimensions do not chain into a network")]
    DimensionChain,
    #[error("checkpoint truncated: expected {expected} more bytes")]
    Truncated { expected: usize },
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"NFLM";
const CHECKPOINT_VERSION: u32 = 1;

/// Dense row-major matrix of `rows` samples by `cols` features.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols);
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Eight independent accumulators so the reduction vectorizes at full
    // register width.
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let base = c * 8;
        for l in 0..8 {
            acc[l] += a[base + l] * b[base + l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// A half-space classifier `x ↦ positive iff w·x + b > 0`; ties go to the
/// negative label so the error set is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub w: Vec<f64>,
    pub b: f64,
    pub positive_label: usize,
    pub negative_label: usize,
}

impl LinearClassifier {
    pub fn new(
        w: Vec<f64>,
        b: f64,
        positive_label: usize,
        negative_label: usize,
    ) -> Result<Self, ClassifierError> {
        if w.iter().all(|v| *v == 0.0) {
            return Err(ClassifierError::ZeroWeights);
        }
        Ok(LinearClassifier {
            w,
            b,
            positive_label,
            negative_label,
        })
    }

    /// The averaging classifier of the toy problem: zero weight on the
    /// label-copy feature, `1/(p-1)` on each noisy feature. Class 1 is the
    /// +1 label, class 0 the -1 label.
    pub fn toy_averaging(p: usize) -> Self {
        let mut w = vec![1.0 / (p as f64 - 1.0); p];
        w[0] = 0.0;
        LinearClassifier {
            w,
            b: 0.0,
            positive_label: 1,
            negative_label: 0,
        }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    /// +1 if `label` is this classifier's positive class, -1 otherwise.
    pub fn label_sign(&self, label: usize) -> f64 {
        if label == self.positive_label {
            1.0
        } else {
            -1.0
        }
    }
}

/// Anything that maps feature vectors to class indices.
pub trait Classifier: Sync {
    fn dim(&self) -> usize;
    fn predict(&self, x: &[f64]) -> usize;
}

impl Classifier for LinearClassifier {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn predict(&self, x: &[f64]) -> usize {
        if self.margin(x) > 0.0 {
            self.positive_label
        } else {
            self.negative_label
        }
    }
}

/// A classifier that exposes the gradient of its training loss with respect
/// to the input, batched; this is what gradient attacks consume.
pub trait AttackTarget: Classifier {
    /// Per-sample loss gradient w.r.t. the inputs for the given true labels.
    fn loss_input_grad_batch(&self, xs: &Matrix, labels: &[usize]) -> Matrix;

    fn predict_batch(&self, xs: &Matrix) -> Vec<usize> {
        (0..xs.rows).map(|i| self.predict(xs.row(i))).collect()
    }

    /// Predictions and input gradients from one shared forward pass; the
    /// default recomputes, implementations fuse.
    fn predict_and_input_grad(&self, xs: &Matrix, labels: &[usize]) -> (Vec<usize>, Matrix) {
        (
            self.predict_batch(xs),
            self.loss_input_grad_batch(xs, labels),
        )
    }
}

impl AttackTarget for LinearClassifier {
    // Logistic loss on the signed margin: grad_x = -y·sigmoid(-y·m)·w, whose
    // sign pattern is -y·sign(w).
    fn loss_input_grad_batch(&self, xs: &Matrix, labels: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(xs.rows, xs.cols);
        for i in 0..xs.rows {
            let y = self.label_sign(labels[i]);
            let m = self.margin(xs.row(i));
            let s = 1.0 / (1.0 + (y * m).exp());
            let row = out.row_mut(i);
            for (o, wj) in row.iter_mut().zip(&self.w) {
                *o = -y * s * wj;
            }
        }
        out
    }

    fn predict_and_input_grad(&self, xs: &Matrix, labels: &[usize]) -> (Vec<usize>, Matrix) {
        let mut out = Matrix::zeros(xs.rows, xs.cols);
        let mut preds = Vec::with_capacity(xs.rows);
        for i in 0..xs.rows {
            let m = self.margin(xs.row(i));
            preds.push(if m > 0.0 {
                self.positive_label
            } else {
                self.negative_label
            });
            let y = self.label_sign(labels[i]);
            let s = 1.0 / (1.0 + (y * m).exp());
            let row = out.row_mut(i);
            for (o, wj) in row.iter_mut().zip(&self.w) {
                *o = -y * s * wj;
            }
        }
        (preds, out)
    }
}

/// One dense layer: `out = W·in + b` with `W` stored row-major (rows =
/// output width).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn out_dim(&self) -> usize {
        self.weights.rows
    }

    fn in_dim(&self) -> usize {
        self.weights.cols
    }
}

/// Rectifier network with linear output scores; prediction is the argmax
/// with ties broken toward the lowest class index.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    layers: Vec<DenseLayer>,
}

/// Gradients of the per-sample loss for one input.
#[derive(Debug, Clone)]
pub struct MlpGradient {
    /// Per layer: (weight gradient, bias gradient).
    pub params: Vec<(Matrix, Vec<f64>)>,
    pub input: Vec<f64>,
    pub loss: f64,
}

// Sample rows are processed in small blocks so each weight row is loaded
// once per block rather than once per sample.
const ROW_BLOCK: usize = 8;

// y = x·W^T + b, parallel over sample blocks.
fn forward_layer(x: &Matrix, layer: &DenseLayer, relu: bool) -> Matrix {
    let out_dim = layer.out_dim();
    let in_dim = layer.in_dim();
    let mut out = Matrix::zeros(x.rows, out_dim);
    out.data
        .par_chunks_mut(out_dim * ROW_BLOCK)
        .zip(x.data.par_chunks(in_dim * ROW_BLOCK))
        .for_each(|(oblock, xblock)| {
            let rows = oblock.len() / out_dim;
            for j in 0..out_dim {
                let wrow = layer.weights.row(j);
                let bias = layer.bias[j];
                for s in 0..rows {
                    let mut v = dot(&xblock[s * in_dim..(s + 1) * in_dim], wrow) + bias;
                    if relu && v < 0.0 {
                        v = 0.0;
                    }
                    oblock[s * out_dim + j] = v;
                }
            }
        });
    out
}

// delta_prev = (delta · W) masked by the rectifier pattern of `activated`.
fn backprop_delta(delta: &Matrix, layer: &DenseLayer, activated: &Matrix) -> Matrix {
    let in_dim = layer.in_dim();
    let mut out = Matrix::zeros(delta.rows, in_dim);
    out.data
        .par_chunks_mut(in_dim)
        .enumerate()
        .for_each(|(i, orow)| {
            let drow = delta.row(i);
            let arow = activated.row(i);
            for (j, o) in orow.iter_mut().enumerate() {
                if arow[j] > 0.0 {
                    let mut s = 0.0;
                    for (k, d) in drow.iter().enumerate() {
                        s += d * layer.weights.data[k * in_dim + j];
                    }
                    *o = s;
                }
            }
        });
    out
}

// Unmasked delta · W, for the gradient w.r.t. the raw input.
fn input_grad(delta: &Matrix, layer: &DenseLayer) -> Matrix {
    let in_dim = layer.in_dim();
    let mut out = Matrix::zeros(delta.rows, in_dim);
    out.data
        .par_chunks_mut(in_dim)
        .enumerate()
        .for_each(|(i, orow)| {
            let drow = delta.row(i);
            for (j, o) in orow.iter_mut().enumerate() {
                let mut s = 0.0;
                for (k, d) in drow.iter().enumerate() {
                    s += d * layer.weights.data[k * in_dim + j];
                }
                *o = s;
            }
        });
    out
}

// G = delta^T · acts, parallel over the rows of G so each entry is a
// fixed-order sum over samples.
fn param_grad(delta: &Matrix, acts: &Matrix) -> (Matrix, Vec<f64>) {
    let out_dim = delta.cols;
    let in_dim = acts.cols;
    let mut gw = Matrix::zeros(out_dim, in_dim);
    gw.data
        .par_chunks_mut(in_dim)
        .enumerate()
        .for_each(|(j, grow)| {
            for n in 0..delta.rows {
                let d = delta.data[n * out_dim + j];
                if d != 0.0 {
                    let arow = acts.row(n);
                    for (g, a) in grow.iter_mut().zip(arow) {
                        *g += d * a;
                    }
                }
            }
        });
    let mut gb = vec![0.0; out_dim];
    for n in 0..delta.rows {
        for (g, d) in gb.iter_mut().zip(delta.row(n)) {
            *g += d;
        }
    }
    (gw, gb)
}

// Softmax cross-entropy: fills `delta` with (softmax - onehot) and returns
// per-sample losses.
fn softmax_delta(logits: &Matrix, labels: &[usize]) -> (Vec<f64>, Matrix) {
    let k = logits.cols;
    let mut delta = logits.clone();
    let mut losses = vec![0.0; logits.rows];
    for i in 0..logits.rows {
        let row = delta.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
        let label = labels[i];
        debug_assert!(label < k);
        losses[i] = -(row[label].max(1e-300)).ln();
        row[label] -= 1.0;
    }
    (losses, delta)
}

impl MlpClassifier {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, ClassifierError> {
        if layers.is_empty() {
            return Err(ClassifierError::BadTrainingSet);
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(ClassifierError::DimensionMismatch {
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        Ok(MlpClassifier { layers })
    }

    /// Zero-initialized network, mostly useful in tests.
    pub fn zeros(input: usize, hidden: &[usize], classes: usize) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer {
                weights: Matrix::zeros(w[1], w[0]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        MlpClassifier { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Forward pass keeping the hidden activations and logits (the input
    /// batch is not copied; callers pass it to the backward step).
    fn forward_hidden(&self, xs: &Matrix) -> Vec<Matrix> {
        let mut acts: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let relu = li + 1 < self.layers.len();
            let prev = acts.last().unwrap_or(xs);
            let next = forward_layer(prev, layer, relu);
            acts.push(next);
        }
        acts
    }

    pub fn logits_batch(&self, xs: &Matrix) -> Matrix {
        self.forward_hidden(xs)
            .pop()
            .expect("network has at least one layer")
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let m = Matrix::from_rows(&[x.to_vec()]);
        self.logits_batch(&m).data
    }

    /// Mean loss plus parameter gradients (summed over the batch);
    /// `hidden` comes from [`MlpClassifier::forward_hidden`].
    fn backward(
        &self,
        xs: &Matrix,
        hidden: &[Matrix],
        labels: &[usize],
    ) -> (f64, Vec<(Matrix, Vec<f64>)>) {
        let (losses, mut delta) = softmax_delta(hidden.last().unwrap(), labels);
        let mut grads: Vec<(Matrix, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let input_acts = if li == 0 { xs } else { &hidden[li - 1] };
            grads.push(param_grad(&delta, input_acts));
            if li > 0 {
                delta = backprop_delta(&delta, &self.layers[li], &hidden[li - 1]);
            }
        }
        grads.reverse();
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        (mean_loss, grads)
    }

    /// Per-sample losses and loss gradients w.r.t. the inputs.
    pub fn loss_and_input_grad_batch(&self, xs: &Matrix, labels: &[usize]) -> (Vec<f64>, Matrix) {
        let hidden = self.forward_hidden(xs);
        let (losses, mut delta) = softmax_delta(hidden.last().unwrap(), labels);
        for li in (1..self.layers.len()).rev() {
            delta = backprop_delta(&delta, &self.layers[li], &hidden[li - 1]);
        }
        (losses, input_grad(&delta, &self.layers[0]))
    }

    /// Exact loss, parameter gradient, and input gradient at one point.
    pub fn gradient(&self, x: &[f64], label: usize) -> Result<MlpGradient, ClassifierError> {
        if x.len() != self.dim() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if label >= self.num_classes() {
            return Err(ClassifierError::BadLabel {
                label,
                classes: self.num_classes(),
            });
        }
        let xs = Matrix::from_rows(&[x.to_vec()]);
        let hidden = self.forward_hidden(&xs);
        let (loss, params) = self.backward(&xs, &hidden, &[label]);
        let (_, gx) = self.loss_and_input_grad_batch(&xs, &[label]);
        Ok(MlpGradient {
            params,
            input: gx.data,
            loss,
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(&CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            buf.extend_from_slice(&(layer.weights.rows as u32).to_le_bytes());
            buf.extend_from_slice(&(layer.weights.cols as u32).to_le_bytes());
        }
        for layer in &self.layers {
            for v in &layer.weights.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in &layer.bias {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = 0usize;
        let take = |cur: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
            if *cur + n > bytes.len() {
                return Err(CheckpointError::Truncated {
                    expected: *cur + n - bytes.len(),
                });
            }
            let s = &bytes[*cur..*cur + n];
            *cur += n;
            Ok(s)
        };
        let magic: [u8; 4] = take(&mut cur, 4)?.try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let n_layers = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
            let cols = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
            if rows == 0 || cols == 0 {
                return Err(CheckpointError::DimensionChain);
            }
            dims.push((rows, cols));
        }
        for pair in dims.windows(2) {
            if pair[0].0 != pair[1].1 {
                return Err(CheckpointError::DimensionChain);
            }
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (rows, cols) in dims {
            let mut weights = Matrix::zeros(rows, cols);
            for v in weights.data.iter_mut() {
                *v = f64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap());
            }
            let mut bias = vec![0.0; rows];
            for v in bias.iter_mut() {
                *v = f64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap());
            }
            layers.push(DenseLayer { weights, bias });
        }
        MlpClassifier::from_layers(layers).map_err(|_| CheckpointError::DimensionChain)
    }
}

impl Classifier for MlpClassifier {
    fn dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    fn predict(&self, x: &[f64]) -> usize {
        argmax_lowest(&self.logits(x))
    }
}

impl AttackTarget for MlpClassifier {
    fn loss_input_grad_batch(&self, xs: &Matrix, labels: &[usize]) -> Matrix {
        self.loss_and_input_grad_batch(xs, labels).1
    }

    fn predict_batch(&self, xs: &Matrix) -> Vec<usize> {
        let logits = self.logits_batch(xs);
        (0..logits.rows).map(|i| argmax_lowest(logits.row(i))).collect()
    }

    // One forward pass serves both the misclassification check and the
    // gradient.
    fn predict_and_input_grad(&self, xs: &Matrix, labels: &[usize]) -> (Vec<usize>, Matrix) {
        let hidden = self.forward_hidden(xs);
        let logits = hidden.last().unwrap();
        let preds = (0..logits.rows).map(|i| argmax_lowest(logits.row(i))).collect();
        let (_, mut delta) = softmax_delta(logits, labels);
        for li in (1..self.layers.len()).rev() {
            delta = backprop_delta(&delta, &self.layers[li], &hidden[li - 1]);
        }
        (preds, input_grad(&delta, &self.layers[0]))
    }
}

fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in scores.iter().enumerate().skip(1) {
        if *v > scores[best] {
            best = i;
        }
    }
    best
}

/// A finite labeled training/evaluation set.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub xs: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Draw `n` labeled samples with per-sample streams
    /// `(seed, base + i)` in the sampling namespace.
    pub fn from_sampler(
        sampler: &LabeledSampler,
        n: usize,
        seed: u64,
        base: u64,
    ) -> Result<Self, ClassifierError> {
        let rows: Vec<(Vec<f64>, usize)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng =
                    RngStream::new(seed, stream_index(StreamDomain::Sampling, base + i as u64));
                sampler.sample(&mut rng)
            })
            .collect();
        let labels: Vec<usize> = rows.iter().map(|(_, k)| *k).collect();
        let xs = Matrix::from_rows(&rows.into_iter().map(|(x, _)| x).collect::<Vec<_>>());
        Ok(LabeledSet {
            xs,
            labels,
            num_classes: sampler.num_classes(),
        })
    }
}

/// Training hyperparameters. Defaults: learning rate 0.01, batch 128, 30
/// epochs, rectifier-style init scale √(2/fan_in).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Numerator of the init variance: weights ~ N(0, init_scale/fan_in).
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![200, 100],
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 128,
            seed: 1,
            init_scale: 2.0,
        }
    }
}

/// A trained network plus its training-loss trace (mean cross-entropy per
/// epoch).
#[derive(Debug, Clone)]
pub struct TrainedMlp {
    pub model: MlpClassifier,
    pub loss_trace: Vec<f64>,
}

/// Minibatch gradient descent on softmax cross-entropy; bit-deterministic
/// given the config seed.
pub fn train_mlp(data: &LabeledSet, cfg: &TrainConfig) -> Result<TrainedMlp, ClassifierError> {
    if data.is_empty() || data.xs.rows != data.labels.len() {
        return Err(ClassifierError::BadTrainingSet);
    }
    if let Some(&bad) = data.labels.iter().find(|l| **l >= data.num_classes) {
        return Err(ClassifierError::BadLabel {
            label: bad,
            classes: data.num_classes,
        });
    }
    let input_dim = data.xs.cols;
    let mut dims = vec![input_dim];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(data.num_classes);

    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (li, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let mut rng = RngStream::new(cfg.seed, stream_index(StreamDomain::Init, li as u64));
        let scale = (cfg.init_scale / fan_in as f64).sqrt();
        let mut weights = Matrix::zeros(fan_out, fan_in);
        for v in weights.data.iter_mut() {
            *v = scale * rng.next_normal();
        }
        layers.push(DenseLayer {
            weights,
            bias: vec![0.0; fan_out],
        });
    }
    let mut model = MlpClassifier { layers };

    let n = data.len();
    let batch = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = RngStream::new(cfg.seed, stream_index(StreamDomain::Shuffle, epoch as u64));
        // Fisher-Yates on the index vector.
        for i in (1..n).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| data.xs.row(i).to_vec()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let xs = Matrix::from_rows(&rows);
            let hidden = model.forward_hidden(&xs);
            let (loss, grads) = model.backward(&xs, &hidden, &labels);
            if !loss.is_finite() {
                return Err(ClassifierError::TrainingDiverged { epoch, loss });
            }
            let step = cfg.learning_rate / chunk.len() as f64;
            for (layer, (gw, gb)) in model.layers.iter_mut().zip(&grads) {
                for (w, g) in layer.weights.data.iter_mut().zip(&gw.data) {
                    *w -= step * g;
                }
                for (b, g) in layer.bias.iter_mut().zip(gb) {
                    *b -= step * g;
                }
            }
            epoch_loss += loss;
            batches += 1;
        }
        loss_trace.push(epoch_loss / batches.max(1) as f64);
    }
    Ok(TrainedMlp { model, loss_trace })
}

/// 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilsonInterval {
    pub lo: f64,
    pub hi: f64,
}

pub fn wilson_interval(successes: usize, n: usize) -> WilsonInterval {
    if n == 0 {
        return WilsonInterval { lo: 0.0, hi: 1.0 };
    }
    let z = 1.959963984540054f64;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    WilsonInterval {
        lo: (center - half).max(0.0),
        hi: (center + half).min(1.0),
    }
}

/// Monte-Carlo estimate of the class-conditional standard error
/// `err(h|k)`, with a 95% Wilson interval. Per-sample streams make the
/// estimate independent of evaluation parallelism.
pub fn eval_error<C: Classifier>(
    h: &C,
    sampler: &LabeledSampler,
    k: usize,
    n: usize,
    seed: u64,
) -> Result<(f64, WilsonInterval), ClassifierError> {
    sampler.conditional(k)?;
    let errors: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, stream_index(StreamDomain::Eval, i as u64));
            let x = sampler
                .sample_class(k, &mut rng)
                .expect("validated class index");
            usize::from(h.predict(&x) != k)
        })
        .sum();
    Ok((errors as f64 / n as f64, wilson_interval(errors, n)))
}

/// Unconditional error under the sampler's mixture, same stream contract.
pub fn eval_error_unconditional<C: Classifier>(
    h: &C,
    sampler: &LabeledSampler,
    n: usize,
    seed: u64,
) -> (f64, WilsonInterval) {
    let errors: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, stream_index(StreamDomain::Eval, i as u64));
            let (x, k) = sampler.sample(&mut rng);
            usize::from(h.predict(&x) != k)
        })
        .sum();
    (errors as f64 / n as f64, wilson_interval(errors, n))
}
