//! Minimal layer zoo with exact analytic gradients, written for a fixed
//! hand-differentiated topology rather than a general autodiff graph.
//!
//! All math is `f64`. Every layer caches what its backward pass needs
//! during `forward(training = true)`; calling `backward` first is an error.

mod conv;
mod dense;
mod gradcheck;
mod lstm;

pub use conv::{Conv2d, GlobalAvgPool, MaxPool2};
pub use dense::{Dense, Relu};
pub use gradcheck::{layer_grad_check, GradFn};
pub use lstm::Lstm;

use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {place}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        place: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("probability row {0} sums to {1}, not 1")]
    ProbNotNormalized(usize, f64),
}

/// A named parameter tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: &str, value: Tensor) -> Param {
        let grad = Tensor::zeros(value.dims());
        Param {
            name: name.to_string(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Glorot-uniform initialization: U(-l, l) with l = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(dims);
    for v in t.data_mut() {
        *v = rng.uniform(-limit, limit);
    }
    t
}

/// Forward/backward unit of the network.
pub trait Layer {
    fn forward(&mut self, input: &Tensor, training: bool) -> Result<Tensor, NnError>;
    /// Returns the input gradient; parameter gradients are accumulated
    /// into each `Param::grad`.
    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor, NnError>;
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    fn trainable(&self) -> bool;
    fn set_trainable(&mut self, flag: bool);
}

/// One plain SGD step over a set of layers: `p -= lr * grad` for every
/// parameter of every trainable layer, then all gradients (trainable or
/// not) are zeroed.
pub fn sgd_step(layers: &mut [&mut dyn Layer], lr: f64) {
    for layer in layers.iter_mut() {
        let trainable = layer.trainable();
        for p in layer.params_mut() {
            if trainable {
                let g = p.grad.data().to_vec();
                for (v, gi) in p.value.data_mut().iter_mut().zip(g) {
                    *v -= lr * gi;
                }
            }
            p.zero_grad();
        }
    }
}

/// Row-stabilized softmax of a (B, K) logit matrix.
pub fn softmax(logits: &Tensor) -> Tensor {
    let d = logits.dims();
    assert_eq!(d.len(), 2, "softmax expects (batch, classes)");
    let (b, k) = (d[0], d[1]);
    let mut out = Tensor::zeros(&[b, k]);
    for row in 0..b {
        let xs = &logits.data()[row * k..(row + 1) * k];
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            *out.at2_mut(row, j) = e / z;
        }
    }
    out
}

/// Weighted categorical cross-entropy over softmax probabilities.
///
/// `loss = mean_b( w[y_b] * -ln p_b[y_b] )`. The returned gradient is taken
/// with respect to the *logits* feeding the softmax (the fused
/// softmax-plus-cross-entropy form): `(w[y_b]/B) * (p_b - onehot(y_b))`.
pub fn weighted_cross_entropy(
    probs: &Tensor,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Tensor), NnError> {
    let d = probs.dims();
    assert_eq!(d.len(), 2);
    let (b, k) = (d[0], d[1]);
    assert_eq!(labels.len(), b, "one label per row");
    for row in 0..b {
        let s: f64 = (0..k).map(|j| probs.at2(row, j)).sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(NnError::ProbNotNormalized(row, s));
        }
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[b, k]);
    let bf = b as f64;
    for (row, &y) in labels.iter().enumerate() {
        let w = weights[y];
        let p = probs.at2(row, y).max(1e-300);
        loss += w * -p.ln();
        for j in 0..k {
            let onehot = if j == y { 1.0 } else { 0.0 };
            *grad.at2_mut(row, j) = w / bf * (probs.at2(row, j) - onehot);
        }
    }
    Ok((loss / bf, grad))
}
