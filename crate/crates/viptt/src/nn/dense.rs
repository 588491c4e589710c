//! Fully connected layer and ReLU.

use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{glorot_uniform, Layer, NnError, Param};

/// `y = x W^T + b` with W of shape (out, in).
pub struct Dense {
    w: Param,
    b: Param,
    trainable: bool,
    cached_input: Option<Tensor>,
}

impl Dense {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Dense {
        let w = glorot_uniform(&[out_dim, in_dim], in_dim, out_dim, rng);
        Dense {
            w: Param::new(&format!("{name}.w"), w),
            b: Param::new(&format!("{name}.b"), Tensor::zeros(&[out_dim])),
            trainable: true,
            cached_input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.dims()[0]
    }
}

impl Layer for Dense {
    fn forward(&mut self, input: &Tensor, training: bool) -> Result<Tensor, NnError> {
        let d = input.dims();
        if d.len() != 2 || d[1] != self.in_dim() {
            return Err(NnError::ShapeMismatch {
                place: "dense input",
                expected: vec![d.first().copied().unwrap_or(0), self.in_dim()],
                got: d.to_vec(),
            });
        }
        let (batch, in_dim, out_dim) = (d[0], self.in_dim(), self.out_dim());
        let mut out = Tensor::zeros(&[batch, out_dim]);
        let x = input.data();
        let w = self.w.value.data();
        let b = self.b.value.data();
        for row in 0..batch {
            let xr = &x[row * in_dim..(row + 1) * in_dim];
            for o in 0..out_dim {
                let wr = &w[o * in_dim..(o + 1) * in_dim];
                let mut acc = b[o];
                for i in 0..in_dim {
                    acc += wr[i] * xr[i];
                }
                *out.at2_mut(row, o) = acc;
            }
        }
        if training {
            self.cached_input = Some(input.clone());
        }
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor, NnError> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or(NnError::BackwardBeforeForward)?;
        let (batch, in_dim, out_dim) = (input.dims()[0], self.in_dim(), self.out_dim());
        if upstream.dims() != [batch, out_dim] {
            return Err(NnError::ShapeMismatch {
                place: "dense upstream",
                expected: vec![batch, out_dim],
                got: upstream.dims().to_vec(),
            });
        }
        let mut dx = Tensor::zeros(&[batch, in_dim]);
        let x = input.data();
        let dy = upstream.data();
        let w = self.w.value.data().to_vec();
        let dwd = self.w.grad.data_mut();
        let dbd = self.b.grad.data_mut();
        for row in 0..batch {
            let xr = &x[row * in_dim..(row + 1) * in_dim];
            for o in 0..out_dim {
                let g = dy[row * out_dim + o];
                dbd[o] += g;
                let wr = &w[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    dwd[o * in_dim + i] += g * xr[i];
                    *dx.at2_mut(row, i) += g * wr[i];
                }
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    fn trainable(&self) -> bool {
        self.trainable
    }

    fn set_trainable(&mut self, flag: bool) {
        self.trainable = flag;
    }
}

/// Elementwise `max(0, x)`. The derivative at exactly 0 is taken as 0.
#[derive(Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Relu {
        Relu::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, input: &Tensor, training: bool) -> Result<Tensor, NnError> {
        let mut out = input.clone();
        let mask: Vec<bool> = input.data().iter().map(|&v| v > 0.0).collect();
        for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            }
        }
        if training {
            self.mask = Some(mask);
        }
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor, NnError> {
        let mask = self.mask.as_ref().ok_or(NnError::BackwardBeforeForward)?;
        if mask.len() != upstream.len() {
            return Err(NnError::ShapeMismatch {
                place: "relu upstream",
                expected: vec![mask.len()],
                got: vec![upstream.len()],
            });
        }
        let mut dx = upstream.clone();
        for (v, &m) in dx.data_mut().iter_mut().zip(mask) {
            if !m {
                *v = 0.0;
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![]
    }

    fn trainable(&self) -> bool {
        false
    }

    fn set_trainable(&mut self, _flag: bool) {}
}
