//! 2-D convolution (cross-correlation, stride 1, zero same-padding),
//! 2x2 max pooling, and global average pooling.

use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{glorot_uniform, Layer, NnError, Param};

/// Same-padded stride-1 cross-correlation with an odd square kernel.
/// Weights are (C_out, C_in, K, K), bias (C_out).
pub struct Conv2d {
    w: Param,
    b: Param,
    kernel: usize,
    trainable: bool,
    cached_input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(name: &str, c_in: usize, c_out: usize, kernel: usize, rng: &mut Rng) -> Conv2d {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        let fan_in = c_in * kernel * kernel;
        let fan_out = c_out * kernel * kernel;
        let w = glorot_uniform(&[c_out, c_in, kernel, kernel], fan_in, fan_out, rng);
        Conv2d {
            w: Param::new(&format!("{name}.w"), w),
            b: Param::new(&format!("{name}.b"), Tensor::zeros(&[c_out])),
            kernel,
            trainable: true,
            cached_input: None,
        }
    }

    pub fn c_in(&self) -> usize {
        self.w.value.dims()[1]
    }

    pub fn c_out(&self) -> usize {
        self.w.value.dims()[0]
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, input: &Tensor, training: bool) -> Result<Tensor, NnError> {
        let d = input.dims();
        if d.len() != 4 || d[1] != self.c_in() {
            return Err(NnError::ShapeMismatch {
                place: "conv2d input",
                expected: vec![0, self.c_in(), 0, 0],
                got: d.to_vec(),
            });
        }
        let (batch, c_in, h, w) = (d[0], d[1], d[2], d[3]);
        let (c_out, k) = (self.c_out(), self.kernel);
        let pad = k / 2;
        let mut out = Tensor::zeros(&[batch, c_out, h, w]);
        let x = input.data();
        let wt = self.w.value.data();
        let bias = self.b.value.data();
        let od = out.data_mut();
        for n in 0..batch {
            for co in 0..c_out {
                let out_base = (n * c_out + co) * h * w;
                for ci in 0..c_in {
                    let in_base = (n * c_in + ci) * h * w;
                    let w_base = (co * c_in + ci) * k * k;
                    for i in 0..h {
                        for u in 0..k {
                            let si = i + u;
                            if si < pad || si - pad >= h {
                                continue;
                            }
                            let src_row = in_base + (si - pad) * w;
                            let out_row = out_base + i * w;
                            if k == 3 && w >= 2 {
                                // fused 3-tap stencil: one pass over the row
                                let (w0, w1, w2) =
                                    (wt[w_base + u * 3], wt[w_base + u * 3 + 1], wt[w_base + u * 3 + 2]);
                                let xs = &x[src_row..src_row + w];
                                let os = &mut od[out_row..out_row + w];
                                os[0] += w1 * xs[0] + w2 * xs[1];
                                for j in 1..w - 1 {
                                    os[j] += w0 * xs[j - 1] + w1 * xs[j] + w2 * xs[j + 1];
                                }
                                os[w - 1] += w0 * xs[w - 2] + w1 * xs[w - 1];
                                continue;
                            }
                            for v in 0..k {
                                let wv = wt[w_base + u * k + v];
                                // columns j where j + v - pad is in range
                                let j_lo = pad.saturating_sub(v);
                                let j_hi = (w + pad).saturating_sub(v).min(w);
                                let xs = &x[src_row + j_lo + v - pad..src_row + j_hi + v - pad];
                                let os = &mut od[out_row + j_lo..out_row + j_hi];
                                for (o, xv) in os.iter_mut().zip(xs) {
                                    *o += wv * *xv;
                                }
                            }
                        }
                    }
                }
                for i in 0..h * w {
                    od[out_base + i] += bias[co];
                }
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
        let d = input.dims();
        let (batch, c_in, h, w) = (d[0], d[1], d[2], d[3]);
        let (c_out, k) = (self.c_out(), self.kernel);
        if upstream.dims() != [batch, c_out, h, w] {
            return Err(NnError::ShapeMismatch {
                place: "conv2d upstream",
                expected: vec![batch, c_out, h, w],
                got: upstream.dims().to_vec(),
            });
        }
        let pad = k / 2;
        let mut dx = Tensor::zeros(&[batch, c_in, h, w]);
        let x = input.data();
        let dy = upstream.data();
        let wt = self.w.value.data().to_vec();
        let dwd = self.w.grad.data_mut();
        let dbd = self.b.grad.data_mut();
        let dxd = dx.data_mut();
        for n in 0..batch {
            for co in 0..c_out {
                let out_base = (n * c_out + co) * h * w;
                for i in 0..h * w {
                    dbd[co] += dy[out_base + i];
                }
                for ci in 0..c_in {
                    let in_base = (n * c_in + ci) * h * w;
                    let w_base = (co * c_in + ci) * k * k;
                    for i in 0..h {
                        for u in 0..k {
                            let si = i + u;
                            if si < pad || si - pad >= h {
                                continue;
                            }
                            let src_row = in_base + (si - pad) * w;
                            let out_row = out_base + i * w;
                            if k == 3 && w >= 2 {
                                let (w0, w1, w2) =
                                    (wt[w_base + u * 3], wt[w_base + u * 3 + 1], wt[w_base + u * 3 + 2]);
                                let gs = &dy[out_row..out_row + w];
                                let xs = &x[src_row..src_row + w];
                                let dot = |a: &[f64], b: &[f64]| -> f64 {
                                    a.iter().zip(b).map(|(p, q)| p * q).sum()
                                };
                                dwd[w_base + u * 3] += dot(&gs[1..], &xs[..w - 1]);
                                dwd[w_base + u * 3 + 1] += dot(gs, xs);
                                dwd[w_base + u * 3 + 2] += dot(&gs[..w - 1], &xs[1..]);
                                let dxs = &mut dxd[src_row..src_row + w];
                                dxs[0] += gs[1] * w0 + gs[0] * w1;
                                for j in 1..w - 1 {
                                    dxs[j] += gs[j + 1] * w0 + gs[j] * w1 + gs[j - 1] * w2;
                                }
                                dxs[w - 1] += gs[w - 1] * w1 + gs[w - 2] * w2;
                                continue;
                            }
                            for v in 0..k {
                                let j_lo = pad.saturating_sub(v);
                                let j_hi = (w + pad).saturating_sub(v).min(w);
                                let wv = wt[w_base + u * k + v];
                                let gs = &dy[out_row + j_lo..out_row + j_hi];
                                let xs = &x[src_row + j_lo + v - pad..src_row + j_hi + v - pad];
                                // two simple passes (a dot product and an axpy)
                                // vectorize better than one fused loop
                                let mut dw_acc = 0.0;
                                for (g, xv) in gs.iter().zip(xs) {
                                    dw_acc += g * xv;
                                }
                                let dxs =
                                    &mut dxd[src_row + j_lo + v - pad..src_row + j_hi + v - pad];
                                for (g, dxv) in gs.iter().zip(dxs) {
                                    *dxv += g * wv;
                                }
                                dwd[w_base + u * k + v] += dw_acc;
                            }
                        }
                    }
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

/// 2x2 max pooling with stride 2; trailing odd rows/columns are dropped.
#[derive(Default)]
pub struct MaxPool2 {
    // (input dims, flat argmax index per output element)
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2 {
    pub fn new() -> MaxPool2 {
        MaxPool2::default()
    }
}

impl Layer for MaxPool2 {
    fn forward(&mut self, input: &Tensor, training: bool) -> Result<Tensor, NnError> {
        let d = input.dims();
        if d.len() != 4 || d[2] < 2 || d[3] < 2 {
            return Err(NnError::ShapeMismatch {
                place: "maxpool input",
                expected: vec![0, 0, 2, 2],
                got: d.to_vec(),
            });
        }
        let (batch, c, h, w) = (d[0], d[1], d[2], d[3]);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[batch, c, oh, ow]);
        let mut argmax = vec![0usize; batch * c * oh * ow];
        let x = input.data();
        let od = out.data_mut();
        for nc in 0..batch * c {
            let in_base = nc * h * w;
            let out_base = nc * oh * ow;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let idx = in_base + (2 * i + di) * w + 2 * j + dj;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    od[out_base + i * ow + j] = best;
                    argmax[out_base + i * ow + j] = best_idx;
                }
            }
        }
        if training {
            self.cache = Some((d.to_vec(), argmax));
        }
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor, NnError> {
        let (in_dims, argmax) = self.cache.as_ref().ok_or(NnError::BackwardBeforeForward)?;
        if upstream.len() != argmax.len() {
            return Err(NnError::ShapeMismatch {
                place: "maxpool upstream",
                expected: vec![argmax.len()],
                got: vec![upstream.len()],
            });
        }
        let mut dx = Tensor::zeros(in_dims);
        let dxd = dx.data_mut();
        for (o, &src) in argmax.iter().enumerate() {
            dxd[src] += upstream.data()[o];
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

/// (B, C, H, W) -> (B, C) spatial mean.
#[derive(Default)]
pub struct GlobalAvgPool {
    in_dims: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> GlobalAvgPool {
        GlobalAvgPool::default()
    }
}

impl Layer for GlobalAvgPool {
    fn forward(&mut self, input: &Tensor, training: bool) -> Result<Tensor, NnError> {
        let d = input.dims();
        if d.len() != 4 {
            return Err(NnError::ShapeMismatch {
                place: "gap input",
                expected: vec![0, 0, 0, 0],
                got: d.to_vec(),
            });
        }
        let (batch, c, h, w) = (d[0], d[1], d[2], d[3]);
        let mut out = Tensor::zeros(&[batch, c]);
        let area = (h * w) as f64;
        for nc in 0..batch * c {
            let s: f64 = input.data()[nc * h * w..(nc + 1) * h * w].iter().sum();
            out.data_mut()[nc] = s / area;
        }
        if training {
            self.in_dims = Some(d.to_vec());
        }
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor, NnError> {
        let in_dims = self.in_dims.as_ref().ok_or(NnError::BackwardBeforeForward)?;
        let (batch, c, h, w) = (in_dims[0], in_dims[1], in_dims[2], in_dims[3]);
        if upstream.dims() != [batch, c] {
            return Err(NnError::ShapeMismatch {
                place: "gap upstream",
                expected: vec![batch, c],
                got: upstream.dims().to_vec(),
            });
        }
        let mut dx = Tensor::zeros(in_dims);
        let area = (h * w) as f64;
        for nc in 0..batch * c {
            let g = upstream.data()[nc] / area;
            for v in dx.data_mut()[nc * h * w..(nc + 1) * h * w].iter_mut() {
                *v = g;
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
