//! 4-bit quantized multilayer perceptron inference.
//!
//! The detector is a small MLP whose weights are signed 4-bit integers
//! (-8..=7, symmetric per-layer scale) and whose hidden activations are
//! unsigned 4-bit integers (0..=15, post-ReLU). Inference is integer-only:
//! i32 accumulation, ReLU in the accumulator domain, then requantization to
//! the next layer's 4-bit activation grid through a fixed-point multiplier.
//! Floating point appears only in derived views (dequantized logit,
//! probability) and never influences the verdict, which is the sign test
//! `logit_acc > 0` on the integer accumulator.
//!
//! Feature bytes enter the network through [`quantize_input_byte`]: a byte is
//! read as `b / 255` in [0, 1] and snapped to the 4-bit grid with the fixed
//! input scale 1/15. Because 255 = 15 * 17 the mapping reduces to rounding
//! `b / 17`, which never lands on a tie.

pub mod train;
pub mod weights;

use thiserror::Error;

/// Smallest representable signed 4-bit weight.
pub const WEIGHT_QMIN: i32 = -8;
/// Largest representable signed 4-bit weight.
pub const WEIGHT_QMAX: i32 = 7;
/// Largest representable unsigned 4-bit activation.
pub const ACT_QMAX: i32 = 15;
/// Fixed quantization scale of the normalized input features.
pub const INPUT_SCALE: f64 = 1.0 / 15.0;
/// Length of the detector's input feature vector (two framed messages).
pub const FEATURE_DIM: usize = 20;
/// Canonical detector topology: 20 inputs, two hidden layers, one logit.
pub const DETECTOR_DIMS: [usize; 4] = [20, 64, 32, 1];

/// Fractional bits of the fixed-point requantization multiplier.
pub const REQUANT_SHIFT: u32 = 40;

/// Binary classification outcome of the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Benign,
    Attack,
}

impl Verdict {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Benign => "benign",
            Verdict::Attack => "attack",
        }
    }

    #[must_use]
    pub fn is_attack(self) -> bool {
        matches!(self, Verdict::Attack)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QnnError {
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("layer {layer} has a zero dimension ({in_dim}x{out_dim})")]
    ZeroDimension {
        layer: usize,
        in_dim: usize,
        out_dim: usize,
    },
    #[error("layer {layer} expects {expected} inputs but the previous layer produces {got}")]
    DimensionChain {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("final layer must produce exactly one logit, got {got}")]
    FinalDimension { got: usize },
    #[error("layer {layer} holds {got} weights, expected {expected}")]
    WeightCount {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("layer {layer} holds {got} biases, expected {expected}")]
    BiasCount {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("layer {layer} weight {index} is {value}, outside the signed 4-bit range")]
    WeightRange {
        layer: usize,
        index: usize,
        value: i8,
    },
    #[error("layer {layer} {field} scale {value} must be finite and positive")]
    BadScale {
        layer: usize,
        field: &'static str,
        value: f64,
    },
    #[error("layer {layer} requantization ratio {ratio} does not fit the fixed-point format")]
    RequantOverflow { layer: usize, ratio: f64 },
}

/// Numerically stable logistic function.
#[must_use]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Snap `x` to the integer grid `x / scale`, rounding ties to even and
/// clamping to `[qmin, qmax]`.
#[must_use]
pub fn quantize(x: f64, scale: f64, qmin: i32, qmax: i32) -> i32 {
    let q = (x / scale).round_ties_even();
    if q <= qmin as f64 {
        qmin
    } else if q >= qmax as f64 {
        qmax
    } else {
        q as i32
    }
}

/// Map a quantized value back to the real line.
#[must_use]
pub fn dequantize(q: i32, scale: f64) -> f64 {
    q as f64 * scale
}

/// Quantize one raw feature byte to the 4-bit input grid.
///
/// Exact integer form of `round_ties_even((b / 255) / (1 / 15))`: the ratio
/// reduces to `b / 17`, which is never a tie, so plain nearest rounding via
/// `(2b + 17) / 34` matches.
#[must_use]
pub fn quantize_input_byte(b: u8) -> u8 {
    ((2 * b as u32 + 17) / 34) as u8
}

/// Round `p / 2^shift` to the nearest integer, ties to even.
fn round_half_even_shift(p: i128, shift: u32) -> i128 {
    let floor = p >> shift;
    let frac = p - (floor << shift);
    let half = 1i128 << (shift - 1);
    if frac > half || (frac == half && (floor & 1) == 1) {
        floor + 1
    } else {
        floor
    }
}

/// Fixed-point multiplier that rescales an i32 accumulator onto the next
/// layer's activation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Requant {
    mult: i64,
}

impl Requant {
    /// Derive the multiplier from the real rescaling ratio
    /// `in_scale * weight_scale / out_scale`.
    fn from_ratio(layer: usize, ratio: f64) -> Result<Self, QnnError> {
        if !ratio.is_finite() || ratio <= 0.0 {
            return Err(QnnError::RequantOverflow { layer, ratio });
        }
        let scaled = (ratio * (1u64 << REQUANT_SHIFT) as f64).round_ties_even();
        if scaled > i64::MAX as f64 {
            return Err(QnnError::RequantOverflow { layer, ratio });
        }
        Ok(Requant { mult: scaled as i64 })
    }

    /// Rescale a non-negative accumulator and clamp to the 4-bit grid.
    fn apply(self, acc: i32) -> u8 {
        debug_assert!(acc >= 0, "requantization runs after ReLU");
        let product = acc as i128 * self.mult as i128;
        let q = round_half_even_shift(product, REQUANT_SHIFT);
        q.clamp(0, ACT_QMAX as i128) as u8
    }
}

/// One fully connected layer in quantized form.
///
/// `weights` is row-major: `weights[o * in_dim + i]` connects input `i` to
/// output `o`. Biases live in the accumulator domain, whose scale is
/// `in_scale * weight_scale`. For hidden layers `activation_scale` is the
/// quantization scale of the 4-bit output activations; for the final layer it
/// is the dequantization scale of the logit accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight_scale: f64,
    pub activation_scale: f64,
    pub weights: Vec<i8>,
    pub biases: Vec<i32>,
}

impl QuantLayer {
    fn accumulate(&self, input: &[u8], unit: usize) -> i32 {
        let row = &self.weights[unit * self.in_dim..(unit + 1) * self.in_dim];
        let mut acc = self.biases[unit];
        for (w, x) in row.iter().zip(input) {
            acc += *w as i32 * *x as i32;
        }
        acc
    }
}

/// Result of one integer-only forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inference {
    /// Raw integer logit accumulator; the verdict is its sign test.
    pub logit_acc: i64,
    /// Dequantized logit, `logit_acc * logit_scale`.
    pub logit: f64,
    /// `sigmoid(logit)`; above one half exactly when `logit_acc > 0`.
    pub probability: f64,
    pub verdict: Verdict,
}

/// Integer-only quantized MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMlp {
    layers: Vec<QuantLayer>,
    requants: Vec<Requant>,
    logit_scale: f64,
}

impl QuantizedMlp {
    /// Validate the layer stack and derive the fixed-point requantization
    /// multipliers from the stored f64 scales.
    pub fn new(layers: Vec<QuantLayer>) -> Result<Self, QnnError> {
        if layers.is_empty() {
            return Err(QnnError::EmptyNetwork);
        }
        let last = layers.len() - 1;
        let mut in_scale = INPUT_SCALE;
        let mut requants = Vec::with_capacity(last);
        for (l, layer) in layers.iter().enumerate() {
            if layer.in_dim == 0 || layer.out_dim == 0 {
                return Err(QnnError::ZeroDimension {
                    layer: l,
                    in_dim: layer.in_dim,
                    out_dim: layer.out_dim,
                });
            }
            if l > 0 {
                let got = layers[l - 1].out_dim;
                if layer.in_dim != got {
                    return Err(QnnError::DimensionChain {
                        layer: l,
                        expected: layer.in_dim,
                        got,
                    });
                }
            }
            let expected = layer.in_dim * layer.out_dim;
            if layer.weights.len() != expected {
                return Err(QnnError::WeightCount {
                    layer: l,
                    expected,
                    got: layer.weights.len(),
                });
            }
            if layer.biases.len() != layer.out_dim {
                return Err(QnnError::BiasCount {
                    layer: l,
                    expected: layer.out_dim,
                    got: layer.biases.len(),
                });
            }
            if let Some(index) = layer
                .weights
                .iter()
                .position(|w| (*w as i32) < WEIGHT_QMIN || (*w as i32) > WEIGHT_QMAX)
            {
                return Err(QnnError::WeightRange {
                    layer: l,
                    index,
                    value: layer.weights[index],
                });
            }
            for (field, value) in [
                ("weight", layer.weight_scale),
                ("activation", layer.activation_scale),
            ] {
                if !value.is_finite() || value <= 0.0 {
                    return Err(QnnError::BadScale {
                        layer: l,
                        field,
                        value,
                    });
                }
            }
            if l < last {
                let ratio = in_scale * layer.weight_scale / layer.activation_scale;
                requants.push(Requant::from_ratio(l, ratio)?);
                in_scale = layer.activation_scale;
            }
        }
        if layers[last].out_dim != 1 {
            return Err(QnnError::FinalDimension {
                got: layers[last].out_dim,
            });
        }
        let logit_scale = layers[last].activation_scale;
        Ok(QuantizedMlp {
            layers,
            requants,
            logit_scale,
        })
    }

    /// All-zero network with unit scales; always answers benign with
    /// probability exactly one half. Used as the stand-in model when no
    /// weight file is supplied.
    #[must_use]
    pub fn zeroed(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need at least an input and an output dim");
        let layers = dims
            .windows(2)
            .map(|w| QuantLayer {
                in_dim: w[0],
                out_dim: w[1],
                weight_scale: 1.0,
                activation_scale: 1.0,
                weights: vec![0; w[0] * w[1]],
                biases: vec![0; w[1]],
            })
            .collect();
        QuantizedMlp::new(layers).expect("zeroed stack is structurally valid")
    }

    #[must_use]
    pub fn layers(&self) -> &[QuantLayer] {
        &self.layers
    }

    #[must_use]
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    #[must_use]
    pub fn logit_scale(&self) -> f64 {
        self.logit_scale
    }

    /// Run inference on raw feature bytes.
    ///
    /// Panics if `bytes.len()` differs from the network's input dimension.
    #[must_use]
    pub fn infer_bytes(&self, bytes: &[u8]) -> Inference {
        let quantized: Vec<u8> = bytes.iter().map(|b| quantize_input_byte(*b)).collect();
        self.infer_quantized(&quantized)
    }

    /// Run inference on inputs already on the 4-bit grid (0..=15).
    ///
    /// Panics if the length differs from the network's input dimension or a
    /// value exceeds the grid.
    #[must_use]
    pub fn infer_quantized(&self, input: &[u8]) -> Inference {
        assert_eq!(
            input.len(),
            self.input_dim(),
            "input length must match the first layer"
        );
        assert!(
            input.iter().all(|q| *q as i32 <= ACT_QMAX),
            "inputs must already be 4-bit quantized"
        );
        let mut act = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            if l + 1 == self.layers.len() {
                let logit_acc = layer.accumulate(&act, 0) as i64;
                let logit = logit_acc as f64 * self.logit_scale;
                return Inference {
                    logit_acc,
                    logit,
                    probability: sigmoid(logit),
                    verdict: if logit_acc > 0 {
                        Verdict::Attack
                    } else {
                        Verdict::Benign
                    },
                };
            }
            let requant = self.requants[l];
            let mut next = vec![0u8; layer.out_dim];
            for (unit, slot) in next.iter_mut().enumerate() {
                let acc = layer.accumulate(&act, unit).max(0);
                *slot = requant.apply(acc);
            }
            act = next;
        }
        unreachable!("constructor guarantees at least one layer");
    }
}
