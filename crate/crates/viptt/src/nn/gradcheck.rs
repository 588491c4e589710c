//! Central finite-difference gradient checking.
//!
//! The objective for a standalone layer is `sum(forward(x) * r)` for a
//! fixed random projection `r`, whose analytic gradient is exactly
//! `backward(r)`. Errors are relative: `|a - n| / max(|a|, |n|, 1e-12)`.

use crate::rng::Rng;
use crate::tensor::Tensor;

use super::Layer;

/// A scalar objective over a flat parameter vector, for finite-difference
/// probing. Implemented by the layer adapter below and by the full model.
pub trait GradFn {
    fn num_params(&self) -> usize;
    fn get_param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, v: f64);
    fn loss(&mut self) -> f64;
}

/// Central differences at the given flat indices against the analytic
/// gradient vector. Returns the max relative error over probed entries.
pub fn fd_check(f: &mut dyn GradFn, analytic: &[f64], indices: &[usize], eps: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for &i in indices {
        let orig = f.get_param(i);
        f.set_param(i, orig + eps);
        let lp = f.loss();
        f.set_param(i, orig - eps);
        let lm = f.loss();
        f.set_param(i, orig);
        let numeric = (lp - lm) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    worst
}

struct LayerObjective<'a> {
    layer: &'a mut dyn Layer,
    input: Tensor,
    upstream: Tensor,
    // (tensor index, element index) per flat parameter slot; input elements
    // are appended after all parameters so the input gradient is probed too
    n_params: usize,
    tensor_lens: Vec<usize>,
}

impl LayerObjective<'_> {
    fn locate(&self, i: usize) -> (usize, usize) {
        let mut rem = i;
        for (t, &len) in self.tensor_lens.iter().enumerate() {
            if rem < len {
                return (t, rem);
            }
            rem -= len;
        }
        panic!("flat index {i} out of range");
    }
}

impl GradFn for LayerObjective<'_> {
    fn num_params(&self) -> usize {
        self.n_params + self.input.len()
    }

    fn get_param(&self, i: usize) -> f64 {
        if i < self.n_params {
            let (t, k) = self.locate(i);
            self.layer.params()[t].value.data()[k]
        } else {
            self.input.data()[i - self.n_params]
        }
    }

    fn set_param(&mut self, i: usize, v: f64) {
        if i < self.n_params {
            let (t, k) = self.locate(i);
            self.layer.params_mut()[t].value.data_mut()[k] = v;
        } else {
            self.input.data_mut()[i - self.n_params] = v;
        }
    }

    fn loss(&mut self) -> f64 {
        let out = self.layer.forward(&self.input, false).expect("forward");
        out.data()
            .iter()
            .zip(self.upstream.data())
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Check every parameter gradient and the input gradient of `layer` at
/// `input` by central differences. Returns the max relative error.
pub fn layer_grad_check(layer: &mut dyn Layer, input: &Tensor, eps: f64, seed: u64) -> f64 {
    // analytic pass
    let out = layer.forward(input, true).expect("forward");
    let mut rng = Rng::new(seed);
    let mut upstream = Tensor::zeros(out.dims());
    for v in upstream.data_mut() {
        *v = rng.uniform(-1.0, 1.0);
    }
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let dx = layer.backward(&upstream).expect("backward");

    let mut analytic = Vec::new();
    let mut tensor_lens = Vec::new();
    for p in layer.params() {
        analytic.extend_from_slice(p.grad.data());
        tensor_lens.push(p.value.len());
    }
    let n_params = analytic.len();
    analytic.extend_from_slice(dx.data());

    let mut obj = LayerObjective {
        layer,
        input: input.clone(),
        upstream,
        n_params,
        tensor_lens,
    };
    let indices: Vec<usize> = (0..obj.num_params()).collect();
    fd_check(&mut obj, &analytic, &indices, eps)
}
