//! Quantization-aware training of the detector MLP.
//!
//! The float network mirrors the integer inference path: linear layers, batch
//! normalization and ReLU on hidden layers, fake quantization of weights
//! (signed 4-bit, symmetric per-layer scale recomputed every step) and of
//! hidden activations (unsigned 4-bit, scale tracked by a running max
//! observer), and a single logit output trained with class-weighted binary
//! cross entropy. Gradients pass through the quantizers with the clipped
//! straight-through estimator. After training, batch norms are folded into
//! the preceding linear layers and the result is rounded onto the integer
//! grids of a [`QuantizedMlp`].

use super::{
    quantize, quantize_input_byte, sigmoid, QnnError, QuantLayer, QuantizedMlp, ACT_QMAX,
    FEATURE_DIM, INPUT_SCALE, WEIGHT_QMAX, WEIGHT_QMIN,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

/// Stabilizer added to variances before the square root.
pub const BN_EPS: f64 = 1e-5;
/// Weight of a fresh batch statistic in the running mean and variance.
const BN_MOMENTUM: f64 = 0.1;
/// Retention of the activation range observer between steps.
const EMA_MOMENTUM: f64 = 0.99;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One training example: raw detector input bytes and ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledFeature {
    pub bytes: [u8; FEATURE_DIM],
    pub attack: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training set holds only one class ({positives} attack, {negatives} benign)")]
    DegenerateData { positives: usize, negatives: usize },
    #[error("invalid training configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("non-finite value {context}")]
    NonFinite { context: String },
    #[error("batch norm unit {unit} has non-positive standard deviation")]
    ZeroVariance { unit: usize },
    #[error("layer {layer} folded bias {value} does not fit the i32 accumulator")]
    BiasOverflow { layer: usize, value: f64 },
    #[error("exported network is invalid: {0}")]
    Model(#[from] QnnError),
}

/// Per-class loss weights for imbalanced data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    pub benign: f64,
    pub attack: f64,
}

impl ClassWeights {
    /// Balanced weighting: each class contributes half the total mass.
    #[must_use]
    pub fn balanced(benign_count: usize, attack_count: usize) -> Self {
        let n = (benign_count + attack_count) as f64;
        ClassWeights {
            benign: n / (2.0 * benign_count as f64),
            attack: n / (2.0 * attack_count as f64),
        }
    }

    fn for_label(&self, y: f64) -> f64 {
        if y > 0.5 {
            self.attack
        } else {
            self.benign
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    /// Train with the quantizers in the loop. Disabled only for numeric
    /// work such as gradient checks, where the rounding steps would hide
    /// the analytic gradient.
    pub quantize: bool,
    pub seed: u64,
    /// Early stopping patience in epochs without validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            dropout: 0.1,
            quantize: true,
            seed: 42,
            patience: Some(10),
        }
    }
}

impl TrainConfig {
    /// Short schedule for interactive runs and the test suite.
    #[must_use]
    pub fn desk_scale() -> Self {
        TrainConfig {
            epochs: 20,
            patience: Some(5),
            ..TrainConfig::default()
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        let fail = |reason: &str| {
            Err(TrainError::InvalidConfig {
                reason: reason.to_string(),
            })
        };
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return fail("learning rate must be finite and non-negative");
        }
        if !self.dropout.is_finite() || !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerLayout {
    in_dim: usize,
    out_dim: usize,
    w: usize,
    b: usize,
    /// Batch norm parameter offsets; hidden layers only.
    gamma: Option<usize>,
    beta: Option<usize>,
}

fn build_layout(dims: &[usize]) -> (Vec<LayerLayout>, usize) {
    let layer_count = dims.len() - 1;
    let mut off = 0;
    let mut layout = Vec::with_capacity(layer_count);
    for l in 0..layer_count {
        let (in_dim, out_dim) = (dims[l], dims[l + 1]);
        let w = off;
        off += in_dim * out_dim;
        let b = off;
        off += out_dim;
        let (gamma, beta) = if l + 1 < layer_count {
            let g = off;
            off += out_dim;
            let bt = off;
            off += out_dim;
            (Some(g), Some(bt))
        } else {
            (None, None)
        };
        layout.push(LayerLayout {
            in_dim,
            out_dim,
            w,
            b,
            gamma,
            beta,
        });
    }
    (layout, off)
}

/// Activation quantization scale from the observer state. Untrained or dead
/// observers fall back to a unit range so the scale stays positive.
fn act_scale_from_ema(ema: Option<f64>) -> f64 {
    match ema {
        Some(e) if e > 0.0 => e / ACT_QMAX as f64,
        _ => 1.0 / ACT_QMAX as f64,
    }
}

/// Stable binary cross entropy from logits: `max(z,0) - z*y + ln(1+e^-|z|)`.
fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn fake_quant_weights(w: &[f64], quantize_on: bool) -> (Vec<f64>, Vec<bool>) {
    if !quantize_on {
        return (w.to_vec(), vec![true; w.len()]);
    }
    let maxabs = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if maxabs > 0.0 {
        maxabs / WEIGHT_QMAX as f64
    } else {
        1.0
    };
    let mut wq = Vec::with_capacity(w.len());
    let mut pass = Vec::with_capacity(w.len());
    for value in w {
        let r = value / scale;
        pass.push((WEIGHT_QMIN as f64..=WEIGHT_QMAX as f64).contains(&r));
        wq.push(quantize(*value, scale, WEIGHT_QMIN, WEIGHT_QMAX) as f64 * scale);
    }
    (wq, pass)
}

struct LayerCache {
    x_in: Vec<f64>,
    wq: Vec<f64>,
    w_pass: Vec<bool>,
    /// Hidden-layer fields; empty for the final layer.
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mu: Vec<f64>,
    var: Vec<f64>,
    relu_pass: Vec<bool>,
    act_pass: Vec<bool>,
    drop_scale: Vec<f64>,
}

struct StepOutput {
    loss: f64,
    grad: Vec<f64>,
    /// Per hidden layer: (batch mean, biased batch variance).
    bn_stats: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Float network under quantization-aware training.
#[derive(Debug, Clone)]
pub struct Network {
    dims: Vec<usize>,
    layout: Vec<LayerLayout>,
    pub theta: Vec<f64>,
    running_mean: Vec<Vec<f64>>,
    running_var: Vec<Vec<f64>>,
    act_ema: Vec<Option<f64>>,
}

impl Network {
    /// He-uniform initialized network. `dims` lists layer widths from input
    /// to output, e.g. `[20, 64, 32, 1]`.
    #[must_use]
    pub fn new(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least an input and an output dim");
        assert!(dims.iter().all(|d| *d >= 1), "all dims must be positive");
        let (layout, len) = build_layout(dims);
        let mut theta = vec![0.0; len];
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for ll in &layout {
            let limit = (6.0 / ll.in_dim as f64).sqrt();
            for slot in &mut theta[ll.w..ll.w + ll.in_dim * ll.out_dim] {
                *slot = rng.gen_range(-limit..limit);
            }
            if let Some(g) = ll.gamma {
                for slot in &mut theta[g..g + ll.out_dim] {
                    *slot = 1.0;
                }
            }
        }
        let hidden = dims.len() - 2;
        Network {
            dims: dims.to_vec(),
            layout: layout.clone(),
            theta,
            running_mean: (0..hidden).map(|l| vec![0.0; layout[l].out_dim]).collect(),
            running_var: (0..hidden).map(|l| vec![1.0; layout[l].out_dim]).collect(),
            act_ema: vec![None; hidden],
        }
    }

    #[must_use]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn layer_count(&self) -> usize {
        self.layout.len()
    }

    /// Forward pass in evaluation mode: running batch-norm statistics,
    /// frozen observer scales, no dropout.
    #[must_use]
    pub fn eval_logits(&self, xs: &[&[f64]], quantize_on: bool) -> Vec<f64> {
        let n = xs.len();
        let mut act: Vec<Vec<f64>> = xs.iter().map(|x| x.to_vec()).collect();
        for (l, ll) in self.layout.iter().enumerate() {
            let hidden = l + 1 < self.layer_count();
            let (wq, _) =
                fake_quant_weights(&self.theta[ll.w..ll.w + ll.in_dim * ll.out_dim], quantize_on);
            let bias = &self.theta[ll.b..ll.b + ll.out_dim];
            let mut next = vec![vec![0.0; ll.out_dim]; n];
            for (row, x) in next.iter_mut().zip(&act) {
                for j in 0..ll.out_dim {
                    let mut z = bias[j];
                    for i in 0..ll.in_dim {
                        z += wq[j * ll.in_dim + i] * x[i];
                    }
                    row[j] = z;
                }
            }
            if hidden {
                let gamma = &self.theta[ll.gamma.expect("hidden layer")..][..ll.out_dim];
                let beta = &self.theta[ll.beta.expect("hidden layer")..][..ll.out_dim];
                let scale = act_scale_from_ema(self.act_ema[l]);
                for row in &mut next {
                    for j in 0..ll.out_dim {
                        let inv = 1.0 / (self.running_var[l][j] + BN_EPS).sqrt();
                        let y = gamma[j] * (row[j] - self.running_mean[l][j]) * inv + beta[j];
                        let a = y.max(0.0);
                        row[j] = if quantize_on {
                            quantize(a, scale, 0, ACT_QMAX) as f64 * scale
                        } else {
                            a
                        };
                    }
                }
            }
            act = next;
        }
        act.into_iter().map(|row| row[0]).collect()
    }

    #[must_use]
    pub fn eval_logit(&self, x: &[f64], quantize_on: bool) -> f64 {
        self.eval_logits(&[x], quantize_on)[0]
    }

    /// Class-weighted mean BCE in evaluation mode.
    #[must_use]
    pub fn eval_loss(&self, xs: &[&[f64]], ys: &[f64], cw: ClassWeights, quantize_on: bool) -> f64 {
        let logits = self.eval_logits(xs, quantize_on);
        let total: f64 = logits
            .iter()
            .zip(ys)
            .map(|(z, y)| cw.for_label(*y) * bce_with_logits(*z, *y))
            .sum();
        total / xs.len() as f64
    }

    /// Loss and gradient with training-mode batch statistics and no dropout,
    /// leaving the network untouched. This is the surface for numeric
    /// gradient checks.
    #[must_use]
    pub fn batch_loss_and_grad(
        &self,
        xs: &[&[f64]],
        ys: &[f64],
        cw: ClassWeights,
        quantize_on: bool,
    ) -> (f64, Vec<f64>) {
        let mut ema = self.act_ema.clone();
        let out = self.forward_backward(xs, ys, cw, quantize_on, None, &mut ema, false);
        (out.loss, out.grad)
    }

    /// One training forward/backward: batch statistics, dropout, observer
    /// updates. Running statistics are updated by the caller from the
    /// returned batch stats.
    #[allow(clippy::too_many_arguments)]
    fn forward_backward(
        &self,
        xs: &[&[f64]],
        ys: &[f64],
        cw: ClassWeights,
        quantize_on: bool,
        mut dropout: Option<(f64, &mut ChaCha20Rng)>,
        ema: &mut [Option<f64>],
        update_ema: bool,
    ) -> StepOutput {
        let n = xs.len();
        assert_eq!(n, ys.len(), "inputs and labels must align");
        assert!(n > 0, "batch must be non-empty");
        let layer_count = self.layer_count();
        let mut caches: Vec<LayerCache> = Vec::with_capacity(layer_count);
        let mut act: Vec<f64> = Vec::with_capacity(n * self.dims[0]);
        for x in xs {
            assert_eq!(x.len(), self.dims[0], "sample width must match dims[0]");
            act.extend_from_slice(x);
        }

        for (l, ll) in self.layout.iter().enumerate() {
            let hidden = l + 1 < layer_count;
            let (in_dim, out_dim) = (ll.in_dim, ll.out_dim);
            let (wq, w_pass) =
                fake_quant_weights(&self.theta[ll.w..ll.w + in_dim * out_dim], quantize_on);
            let bias = &self.theta[ll.b..ll.b + out_dim];
            let mut z = vec![0.0; n * out_dim];
            for s in 0..n {
                let x = &act[s * in_dim..(s + 1) * in_dim];
                let row = &mut z[s * out_dim..(s + 1) * out_dim];
                for (j, slot) in row.iter_mut().enumerate() {
                    let wrow = &wq[j * in_dim..(j + 1) * in_dim];
                    let mut acc = bias[j];
                    for i in 0..in_dim {
                        acc += wrow[i] * x[i];
                    }
                    *slot = acc;
                }
            }

            let mut cache = LayerCache {
                x_in: act,
                wq,
                w_pass,
                xhat: Vec::new(),
                inv_std: Vec::new(),
                mu: Vec::new(),
                var: Vec::new(),
                relu_pass: Vec::new(),
                act_pass: Vec::new(),
                drop_scale: Vec::new(),
            };

            if !hidden {
                caches.push(cache);
                act = z;
                break;
            }

            // Batch norm over the batch dimension.
            let mut mu = vec![0.0; out_dim];
            for s in 0..n {
                for j in 0..out_dim {
                    mu[j] += z[s * out_dim + j];
                }
            }
            for m in &mut mu {
                *m /= n as f64;
            }
            let mut var = vec![0.0; out_dim];
            for s in 0..n {
                for j in 0..out_dim {
                    let d = z[s * out_dim + j] - mu[j];
                    var[j] += d * d;
                }
            }
            for v in &mut var {
                *v /= n as f64;
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let gamma = &self.theta[ll.gamma.expect("hidden layer")..][..out_dim];
            let beta = &self.theta[ll.beta.expect("hidden layer")..][..out_dim];

            let mut xhat = vec![0.0; n * out_dim];
            let mut a = vec![0.0; n * out_dim];
            let mut relu_pass = vec![false; n * out_dim];
            for s in 0..n {
                for j in 0..out_dim {
                    let idx = s * out_dim + j;
                    let h = (z[idx] - mu[j]) * inv_std[j];
                    xhat[idx] = h;
                    let y = gamma[j] * h + beta[j];
                    relu_pass[idx] = y > 0.0;
                    a[idx] = y.max(0.0);
                }
            }

            // Observer sees the real (pre fake-quant) activation range.
            if update_ema {
                let amax = a.iter().fold(0.0f64, |m, v| m.max(*v));
                ema[l] = Some(match ema[l] {
                    None => amax,
                    Some(e) => EMA_MOMENTUM * e + (1.0 - EMA_MOMENTUM) * amax,
                });
            }

            let mut act_pass = vec![true; n * out_dim];
            if quantize_on {
                let scale = act_scale_from_ema(ema[l]);
                for (idx, value) in a.iter_mut().enumerate() {
                    act_pass[idx] = *value / scale <= ACT_QMAX as f64;
                    *value = quantize(*value, scale, 0, ACT_QMAX) as f64 * scale;
                }
            }

            let mut drop_scale = Vec::new();
            if let Some((p, rng)) = dropout.as_mut() {
                if *p > 0.0 {
                    let keep = 1.0 - *p;
                    drop_scale = (0..n * out_dim)
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    for (value, d) in a.iter_mut().zip(&drop_scale) {
                        *value *= d;
                    }
                }
            }

            cache.xhat = xhat;
            cache.inv_std = inv_std;
            cache.mu = mu;
            cache.var = var;
            cache.relu_pass = relu_pass;
            cache.act_pass = act_pass;
            cache.drop_scale = drop_scale;
            caches.push(cache);
            act = a;
        }

        // act now holds the logits (n x 1).
        let logits = act;
        let mut loss = 0.0;
        let mut dz = vec![0.0; n];
        for s in 0..n {
            let (z, y) = (logits[s], ys[s]);
            let w = cw.for_label(y);
            loss += w * bce_with_logits(z, y);
            dz[s] = w * (sigmoid(z) - y) / n as f64;
        }
        loss /= n as f64;

        let mut grad = vec![0.0; self.theta.len()];
        let mut bn_stats = Vec::new();
        // dz starts as gradient w.r.t. the final layer's output (n x 1) and
        // is rewritten to the gradient w.r.t. each layer's input on the way
        // down.
        let mut d_out = dz.clone();
        for l in (0..layer_count).rev() {
            let ll = &self.layout[l];
            let (in_dim, out_dim) = (ll.in_dim, ll.out_dim);
            let cache = &caches[l];
            let hidden = l + 1 < layer_count;

            let mut d_z = d_out;
            if hidden {
                // Reverse dropout, activation STE, ReLU, then batch norm.
                if !cache.drop_scale.is_empty() {
                    for (g, d) in d_z.iter_mut().zip(&cache.drop_scale) {
                        *g *= d;
                    }
                }
                for (idx, g) in d_z.iter_mut().enumerate() {
                    if !cache.act_pass[idx] || !cache.relu_pass[idx] {
                        *g = 0.0;
                    }
                }
                let gamma = &self.theta[ll.gamma.expect("hidden layer")..][..out_dim];
                let g_off = ll.gamma.expect("hidden layer");
                let b_off = ll.beta.expect("hidden layer");
                let mut sum_dxhat = vec![0.0; out_dim];
                let mut sum_dxhat_xhat = vec![0.0; out_dim];
                for s in 0..n {
                    for j in 0..out_dim {
                        let idx = s * out_dim + j;
                        let dy = d_z[idx];
                        grad[g_off + j] += dy * cache.xhat[idx];
                        grad[b_off + j] += dy;
                        let dxhat = dy * gamma[j];
                        sum_dxhat[j] += dxhat;
                        sum_dxhat_xhat[j] += dxhat * cache.xhat[idx];
                    }
                }
                for s in 0..n {
                    for j in 0..out_dim {
                        let idx = s * out_dim + j;
                        let dxhat = d_z[idx] * gamma[j];
                        d_z[idx] = cache.inv_std[j] / n as f64
                            * (n as f64 * dxhat
                                - sum_dxhat[j]
                                - cache.xhat[idx] * sum_dxhat_xhat[j]);
                    }
                }
                bn_stats.push((cache.mu.clone(), cache.var.clone()));
            }

            // Linear backward through the fake-quantized weights.
            for s in 0..n {
                let x = &cache.x_in[s * in_dim..(s + 1) * in_dim];
                for j in 0..out_dim {
                    let g = d_z[s * out_dim + j];
                    grad[ll.b + j] += g;
                    let w_row = ll.w + j * in_dim;
                    for i in 0..in_dim {
                        if cache.w_pass[j * in_dim + i] {
                            grad[w_row + i] += g * x[i];
                        }
                    }
                }
            }
            if l > 0 {
                let mut d_x = vec![0.0; n * in_dim];
                for s in 0..n {
                    for j in 0..out_dim {
                        let g = d_z[s * out_dim + j];
                        let wrow = &cache.wq[j * in_dim..(j + 1) * in_dim];
                        for i in 0..in_dim {
                            d_x[s * in_dim + i] += g * wrow[i];
                        }
                    }
                }
                d_out = d_x;
            } else {
                d_out = Vec::new();
            }
        }
        bn_stats.reverse();

        StepOutput {
            loss,
            grad,
            bn_stats,
        }
    }

    fn apply_bn_stats(&mut self, bn_stats: &[(Vec<f64>, Vec<f64>)], batch_len: usize) {
        for (l, (mu, var)) in bn_stats.iter().enumerate() {
            // Running variance uses the unbiased estimator when possible.
            let correction = if batch_len > 1 {
                batch_len as f64 / (batch_len - 1) as f64
            } else {
                1.0
            };
            for j in 0..mu.len() {
                self.running_mean[l][j] =
                    (1.0 - BN_MOMENTUM) * self.running_mean[l][j] + BN_MOMENTUM * mu[j];
                self.running_var[l][j] = (1.0 - BN_MOMENTUM) * self.running_var[l][j]
                    + BN_MOMENTUM * var[j] * correction;
            }
        }
    }

    /// Fold batch norms into the linear layers using the running statistics.
    pub fn fold(&self) -> Result<Vec<FoldedLayer>, TrainError> {
        let mut out = Vec::with_capacity(self.layer_count());
        for (l, ll) in self.layout.iter().enumerate() {
            let weights = &self.theta[ll.w..ll.w + ll.in_dim * ll.out_dim];
            let biases = &self.theta[ll.b..ll.b + ll.out_dim];
            if l + 1 < self.layer_count() {
                let gamma = &self.theta[ll.gamma.expect("hidden layer")..][..ll.out_dim];
                let beta = &self.theta[ll.beta.expect("hidden layer")..][..ll.out_dim];
                let sigma: Vec<f64> = self.running_var[l]
                    .iter()
                    .map(|v| (v + BN_EPS).sqrt())
                    .collect();
                let (w, b) = fold_batchnorm(
                    weights,
                    biases,
                    gamma,
                    beta,
                    &self.running_mean[l],
                    &sigma,
                    ll.in_dim,
                )?;
                out.push(FoldedLayer {
                    in_dim: ll.in_dim,
                    out_dim: ll.out_dim,
                    weights: w,
                    biases: b,
                });
            } else {
                out.push(FoldedLayer {
                    in_dim: ll.in_dim,
                    out_dim: ll.out_dim,
                    weights: weights.to_vec(),
                    biases: biases.to_vec(),
                });
            }
        }
        Ok(out)
    }

    /// Round the folded float network onto the 4-bit integer grids.
    pub fn export_quantized(&self) -> Result<QuantizedMlp, TrainError> {
        let folded = self.fold()?;
        let mut in_scale = INPUT_SCALE;
        let mut layers = Vec::with_capacity(folded.len());
        for (l, fl) in folded.iter().enumerate() {
            let is_last = l + 1 == folded.len();
            let maxabs = fl.weights.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !maxabs.is_finite() {
                return Err(TrainError::NonFinite {
                    context: format!("in layer {l} folded weights"),
                });
            }
            let weight_scale = if maxabs > 0.0 {
                maxabs / WEIGHT_QMAX as f64
            } else {
                1.0
            };
            let weights: Vec<i8> = fl
                .weights
                .iter()
                .map(|w| quantize(*w, weight_scale, WEIGHT_QMIN, WEIGHT_QMAX) as i8)
                .collect();
            let acc_scale = in_scale * weight_scale;
            let mut biases = Vec::with_capacity(fl.biases.len());
            for b in &fl.biases {
                if !b.is_finite() {
                    return Err(TrainError::NonFinite {
                        context: format!("in layer {l} folded biases"),
                    });
                }
                let q = (b / acc_scale).round_ties_even();
                if q.abs() > i32::MAX as f64 {
                    return Err(TrainError::BiasOverflow {
                        layer: l,
                        value: *b,
                    });
                }
                biases.push(q as i32);
            }
            let activation_scale = if is_last {
                acc_scale
            } else {
                act_scale_from_ema(self.act_ema[l])
            };
            layers.push(QuantLayer {
                in_dim: fl.in_dim,
                out_dim: fl.out_dim,
                weight_scale,
                activation_scale,
                weights,
                biases,
            });
            in_scale = activation_scale;
        }
        Ok(QuantizedMlp::new(layers)?)
    }
}

/// One layer after batch-norm folding, still in floats.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Plain float forward through folded layers (ReLU between, none after the
/// last). Reference surface for fold-equivalence checks.
#[must_use]
pub fn folded_logit(layers: &[FoldedLayer], x: &[f64]) -> f64 {
    let mut act = x.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let last = l + 1 == layers.len();
        let mut next = vec![0.0; layer.out_dim];
        for (j, slot) in next.iter_mut().enumerate() {
            let row = &layer.weights[j * layer.in_dim..(j + 1) * layer.in_dim];
            let mut z = layer.biases[j];
            for (w, a) in row.iter().zip(&act) {
                z += w * a;
            }
            *slot = if last { z } else { z.max(0.0) };
        }
        act = next;
    }
    act[0]
}

/// Fold one batch norm (given per-unit gamma, beta, mean and standard
/// deviation) into the preceding linear layer.
pub fn fold_batchnorm(
    weights: &[f64],
    biases: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    sigma: &[f64],
    in_dim: usize,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let out_dim = biases.len();
    assert_eq!(weights.len(), in_dim * out_dim, "weight count must match");
    assert_eq!(gamma.len(), out_dim);
    assert_eq!(beta.len(), out_dim);
    assert_eq!(mean.len(), out_dim);
    assert_eq!(sigma.len(), out_dim);
    let mut w = vec![0.0; weights.len()];
    let mut b = vec![0.0; out_dim];
    for j in 0..out_dim {
        if sigma[j] <= 0.0 {
            return Err(TrainError::ZeroVariance { unit: j });
        }
        let factor = gamma[j] / sigma[j];
        for i in 0..in_dim {
            w[j * in_dim + i] = weights[j * in_dim + i] * factor;
        }
        b[j] = (biases[j] - mean[j]) * factor + beta[j];
    }
    Ok((w, b))
}

/// Summary of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
}

fn features_to_floats(set: &[LabeledFeature]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs = set
        .iter()
        .map(|f| {
            f.bytes
                .iter()
                .map(|b| quantize_input_byte(*b) as f64 * INPUT_SCALE)
                .collect()
        })
        .collect();
    let ys = set
        .iter()
        .map(|f| if f.attack { 1.0 } else { 0.0 })
        .collect();
    (xs, ys)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for k in 0..theta.len() {
            self.m[k] = ADAM_BETA1 * self.m[k] + (1.0 - ADAM_BETA1) * grad[k];
            self.v[k] = ADAM_BETA2 * self.v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
            let mh = self.m[k] / bc1;
            let vh = self.v[k] / bc2;
            theta[k] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

/// Train a detector on labeled features. `val_set` may be empty, which
/// disables early stopping.
pub fn train(
    train_set: &[LabeledFeature],
    val_set: &[LabeledFeature],
    dims: &[usize],
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport), TrainError> {
    cfg.validate()?;
    if dims.len() < 2 || dims[0] != FEATURE_DIM || *dims.last().expect("non-empty") != 1 {
        return Err(TrainError::InvalidConfig {
            reason: format!(
                "dims must run from {FEATURE_DIM} inputs to 1 output, got {dims:?}"
            ),
        });
    }
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let positives = train_set.iter().filter(|f| f.attack).count();
    let negatives = train_set.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(TrainError::DegenerateData {
            positives,
            negatives,
        });
    }
    let cw = ClassWeights::balanced(negatives, positives);
    let (xs, ys) = features_to_floats(train_set);
    let (val_xs, val_ys) = features_to_floats(val_set);
    let val_refs: Vec<&[f64]> = val_xs.iter().map(|x| x.as_slice()).collect();

    let mut net = Network::new(dims, cfg.seed);
    let mut adam = Adam::new(net.theta.len());
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut indices: Vec<usize> = (0..train_set.len()).collect();

    let mut report = TrainReport {
        epochs_run: 0,
        train_losses: Vec::new(),
        val_losses: Vec::new(),
        best_val_loss: None,
        stopped_early: false,
    };
    let mut best: Option<(f64, Network)> = None;
    let mut strikes = 0usize;

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let batch_xs: Vec<&[f64]> = chunk.iter().map(|i| xs[*i].as_slice()).collect();
            let batch_ys: Vec<f64> = chunk.iter().map(|i| ys[*i]).collect();
            let mut ema = net.act_ema.clone();
            let out = net.forward_backward(
                &batch_xs,
                &batch_ys,
                cw,
                cfg.quantize,
                Some((cfg.dropout, &mut rng)),
                &mut ema,
                true,
            );
            if !out.loss.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite {
                    context: format!("in epoch {epoch} training step"),
                });
            }
            net.act_ema = ema;
            net.apply_bn_stats(&out.bn_stats, batch_xs.len());
            adam.step(&mut net.theta, &out.grad, cfg.learning_rate);
            epoch_loss += out.loss;
            batches += 1;
        }
        report.train_losses.push(epoch_loss / batches as f64);
        report.epochs_run = epoch + 1;

        if !val_refs.is_empty() {
            let vloss = net.eval_loss(&val_refs, &val_ys, cw, cfg.quantize);
            if !vloss.is_finite() {
                return Err(TrainError::NonFinite {
                    context: format!("in epoch {epoch} validation loss"),
                });
            }
            report.val_losses.push(vloss);
            let improved = best.as_ref().is_none_or(|(b, _)| vloss < *b);
            if improved {
                best = Some((vloss, net.clone()));
                strikes = 0;
            } else if let Some(patience) = cfg.patience {
                strikes += 1;
                if strikes >= patience {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }

    if let Some((vloss, snapshot)) = best {
        report.best_val_loss = Some(vloss);
        net = snapshot;
    }
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_packs_every_parameter_once() {
        let (layout, len) = build_layout(&[3, 4, 2, 1]);
        assert_eq!(len, (12 + 4 + 4 + 4) + (8 + 2 + 2 + 2) + (2 + 1));
        assert_eq!(layout[0].gamma, Some(16));
        assert_eq!(layout[2].gamma, None);
        let net = Network::new(&[3, 4, 2, 1], 7);
        assert_eq!(net.theta.len(), len);
    }

    #[test]
    fn class_weights_put_half_the_mass_on_each_class() {
        let cw = ClassWeights::balanced(8, 2);
        assert_eq!(cw.benign, 10.0 / 16.0);
        assert_eq!(cw.attack, 2.5);
        assert_eq!(cw.for_label(1.0), 2.5);
    }

    #[test]
    fn stable_bce_matches_the_naive_formula() {
        for (z, y) in [(0.3, 1.0), (-1.7, 0.0), (2.0, 0.0), (-0.4, 1.0)] {
            let p = sigmoid(z);
            let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((bce_with_logits(z, y) - naive).abs() < 1e-12);
        }
        // Extreme logits stay finite.
        assert!(bce_with_logits(1e4, 0.0).is_finite());
        assert!(bce_with_logits(-1e4, 1.0).is_finite());
    }

    #[test]
    fn identity_batchnorm_folds_to_the_same_layer() {
        let w = vec![0.5, -1.0, 2.0, 0.25];
        let b = vec![0.1, -0.2];
        let (fw, fb) = fold_batchnorm(
            &w,
            &b,
            &[1.0, 1.0],
            &[0.0, 0.0],
            &[0.0, 0.0],
            &[1.0, 1.0],
            2,
        )
        .unwrap();
        assert_eq!(fw, w);
        assert_eq!(fb, b);
    }

    #[test]
    fn zero_sigma_is_rejected() {
        let err = fold_batchnorm(&[1.0], &[0.0], &[1.0], &[0.0], &[0.0], &[0.0], 1);
        assert_eq!(err, Err(TrainError::ZeroVariance { unit: 0 }));
    }

    #[test]
    fn folding_preserves_the_eval_forward() {
        let mut net = Network::new(&[4, 5, 3, 1], 123);
        // Move the running stats off their initial values so the fold has
        // something real to absorb.
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for stats in net.running_mean.iter_mut().chain(net.running_var.iter_mut()) {
            for v in stats.iter_mut() {
                *v = rng.gen_range(0.2..1.8);
            }
        }
        let folded = net.fold().unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let direct = net.eval_logit(&x, false);
            let via_fold = folded_logit(&folded, &x);
            assert!(
                (direct - via_fold).abs() <= 1e-9 * direct.abs().max(1.0),
                "fold drifted: {direct} vs {via_fold}"
            );
        }
    }

    #[test]
    fn export_of_untrained_zero_weights_is_valid() {
        let mut net = Network::new(&[FEATURE_DIM, 4, 1], 5);
        for (l, ll) in net.layout.clone().iter().enumerate() {
            for slot in &mut net.theta[ll.w..ll.w + ll.in_dim * ll.out_dim] {
                *slot = 0.0;
            }
            let _ = l;
        }
        let mlp = net.export_quantized().unwrap();
        assert_eq!(mlp.input_dim(), FEATURE_DIM);
        let out = mlp.infer_bytes(&[0u8; FEATURE_DIM]);
        assert_eq!(out.logit_acc, 0);
    }

    fn tiny_dataset() -> Vec<LabeledFeature> {
        let mut set = Vec::new();
        for k in 0..8u8 {
            let mut bytes = [0u8; FEATURE_DIM];
            bytes[0] = k;
            set.push(LabeledFeature {
                bytes,
                attack: k % 2 == 0,
            });
        }
        set
    }

    #[test]
    fn train_rejects_empty_and_single_class_sets() {
        let cfg = TrainConfig::desk_scale();
        assert_eq!(
            train(&[], &[], &[FEATURE_DIM, 2, 1], &cfg).err(),
            Some(TrainError::EmptyDataset)
        );
        let benign_only: Vec<LabeledFeature> = tiny_dataset()
            .into_iter()
            .map(|mut f| {
                f.attack = false;
                f
            })
            .collect();
        assert_eq!(
            train(&benign_only, &[], &[FEATURE_DIM, 2, 1], &cfg).err(),
            Some(TrainError::DegenerateData {
                positives: 0,
                negatives: 8
            })
        );
    }

    #[test]
    fn train_rejects_bad_configs() {
        let data = tiny_dataset();
        let mut cfg = TrainConfig::desk_scale();
        cfg.batch_size = 0;
        assert!(matches!(
            train(&data, &[], &[FEATURE_DIM, 2, 1], &cfg),
            Err(TrainError::InvalidConfig { .. })
        ));
        let mut cfg = TrainConfig::desk_scale();
        cfg.learning_rate = f64::NAN;
        assert!(matches!(
            train(&data, &[], &[FEATURE_DIM, 2, 1], &cfg),
            Err(TrainError::InvalidConfig { .. })
        ));
        let bad_dims = train(&data, &[], &[FEATURE_DIM, 2, 3], &TrainConfig::desk_scale());
        assert!(matches!(bad_dims, Err(TrainError::InvalidConfig { .. })));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_at_initialization() {
        let data = tiny_dataset();
        let mut cfg = TrainConfig::desk_scale();
        cfg.epochs = 2;
        cfg.learning_rate = 0.0;
        cfg.dropout = 0.0;
        let (net, report) = train(&data, &[], &[FEATURE_DIM, 3, 1], &cfg).unwrap();
        assert_eq!(report.epochs_run, 2);
        let fresh = Network::new(&[FEATURE_DIM, 3, 1], cfg.seed);
        assert_eq!(net.theta, fresh.theta, "zero step size must not move theta");
    }
}
