//! LSTM over a (batch, time, features) sequence, returning only the last
//! hidden state, with full backpropagation through time.
//!
//! Gate recurrence, all per element:
//!   i = sigmoid(x Wi^T + h Ui^T + bi)      input gate
//!   f = sigmoid(x Wf^T + h Uf^T + bf)      forget gate
//!   o = sigmoid(x Wo^T + h Uo^T + bo)      output gate
//!   g = tanh   (x Wg^T + h Ug^T + bg)      candidate
//!   c_t = f * c_{t-1} + i * g
//!   h_t = o * tanh(c_t)
//!
//! The forget-gate bias is initialized to 1, everything else Glorot/zero.

use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{glorot_uniform, Layer, NnError, Param};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct StepCache {
    x: Tensor,      // (B, F)
    h_prev: Tensor, // (B, U)
    c_prev: Tensor, // (B, U)
    i: Tensor,
    f: Tensor,
    o: Tensor,
    g: Tensor,
    c: Tensor,
}

pub struct Lstm {
    // input weights (U, F), recurrent weights (U, U), biases (U);
    // gate order throughout: i, f, o, g
    params: Vec<Param>,
    units: usize,
    in_dim: usize,
    trainable: bool,
    cache: Option<Vec<StepCache>>,
}

const WI: usize = 0;
const WF: usize = 1;
const WO: usize = 2;
const WG: usize = 3;
const UI: usize = 4;
const UF: usize = 5;
const UO: usize = 6;
const UG: usize = 7;
const BI: usize = 8;
const BF: usize = 9;
const BO: usize = 10;
const BG: usize = 11;

impl Lstm {
    pub fn new(name: &str, in_dim: usize, units: usize, rng: &mut Rng) -> Lstm {
        let gate_names = ["i", "f", "o", "g"];
        let mut params = Vec::with_capacity(12);
        for gn in gate_names {
            let w = glorot_uniform(&[units, in_dim], in_dim, units, rng);
            params.push(Param::new(&format!("{name}.w{gn}"), w));
        }
        for gn in gate_names {
            let u = glorot_uniform(&[units, units], units, units, rng);
            params.push(Param::new(&format!("{name}.u{gn}"), u));
        }
        for gn in gate_names {
            let mut b = Tensor::zeros(&[units]);
            if gn == "f" {
                b.fill(1.0);
            }
            params.push(Param::new(&format!("{name}.b{gn}"), b));
        }
        Lstm {
            params,
            units,
            in_dim,
            trainable: true,
            cache: None,
        }
    }

    pub fn units(&self) -> usize {
        self.units
    }

    /// y = x W^T + h U^T + b, evaluated per batch row.
    fn gate_preact(&self, x: &Tensor, h: &Tensor, wi: usize, ui: usize, bi: usize) -> Tensor {
        let b = x.dims()[0];
        let (u, f) = (self.units, self.in_dim);
        let mut out = Tensor::zeros(&[b, u]);
        let w = self.params[wi].value.data();
        let uu = self.params[ui].value.data();
        let bias = self.params[bi].value.data();
        for row in 0..b {
            let xr = &x.data()[row * f..(row + 1) * f];
            let hr = &h.data()[row * u..(row + 1) * u];
            for k in 0..u {
                let mut acc = bias[k];
                let wr = &w[k * f..(k + 1) * f];
                for j in 0..f {
                    acc += wr[j] * xr[j];
                }
                let ur = &uu[k * u..(k + 1) * u];
                for j in 0..u {
                    acc += ur[j] * hr[j];
                }
                *out.at2_mut(row, k) = acc;
            }
        }
        out
    }
}

impl Layer for Lstm {
    fn forward(&mut self, input: &Tensor, training: bool) -> Result<Tensor, NnError> {
        let d = input.dims();
        if d.len() != 3 || d[2] != self.in_dim {
            return Err(NnError::ShapeMismatch {
                place: "lstm input",
                expected: vec![0, 0, self.in_dim],
                got: d.to_vec(),
            });
        }
        let (batch, time, feat) = (d[0], d[1], d[2]);
        let u = self.units;
        let mut h = Tensor::zeros(&[batch, u]);
        let mut c = Tensor::zeros(&[batch, u]);
        let mut caches = Vec::with_capacity(time);
        for t in 0..time {
            let mut x = Tensor::zeros(&[batch, feat]);
            for row in 0..batch {
                for j in 0..feat {
                    *x.at2_mut(row, j) = input.at3(row, t, j);
                }
            }
            let mut i_g = self.gate_preact(&x, &h, WI, UI, BI);
            let mut f_g = self.gate_preact(&x, &h, WF, UF, BF);
            let mut o_g = self.gate_preact(&x, &h, WO, UO, BO);
            let mut g_g = self.gate_preact(&x, &h, WG, UG, BG);
            i_g.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
            f_g.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
            o_g.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
            g_g.data_mut().iter_mut().for_each(|v| *v = v.tanh());
            let c_prev = c.clone();
            let h_prev = h.clone();
            for idx in 0..batch * u {
                let cv = f_g.data()[idx] * c_prev.data()[idx] + i_g.data()[idx] * g_g.data()[idx];
                c.data_mut()[idx] = cv;
                h.data_mut()[idx] = o_g.data()[idx] * cv.tanh();
            }
            if training {
                caches.push(StepCache {
                    x,
                    h_prev,
                    c_prev,
                    i: i_g,
                    f: f_g,
                    o: o_g,
                    g: g_g,
                    c: c.clone(),
                });
            }
        }
        if training {
            self.cache = Some(caches);
        }
        Ok(h)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor, NnError> {
        let caches = self.cache.as_ref().ok_or(NnError::BackwardBeforeForward)?;
        let time = caches.len();
        let batch = caches[0].x.dims()[0];
        let (u, feat) = (self.units, self.in_dim);
        if upstream.dims() != [batch, u] {
            return Err(NnError::ShapeMismatch {
                place: "lstm upstream",
                expected: vec![batch, u],
                got: upstream.dims().to_vec(),
            });
        }
        let mut dx_seq = Tensor::zeros(&[batch, time, feat]);
        let mut dh = upstream.clone();
        let mut dc = Tensor::zeros(&[batch, u]);

        // per-gate pre-activation gradients for the current step
        let mut dpre = [
            Tensor::zeros(&[batch, u]),
            Tensor::zeros(&[batch, u]),
            Tensor::zeros(&[batch, u]),
            Tensor::zeros(&[batch, u]),
        ];
        for t in (0..time).rev() {
            let s = &caches[t];
            for idx in 0..batch * u {
                let (iv, fv, ov, gv) = (
                    s.i.data()[idx],
                    s.f.data()[idx],
                    s.o.data()[idx],
                    s.g.data()[idx],
                );
                let tanh_c = s.c.data()[idx].tanh();
                let dhv = dh.data()[idx];
                let dcv = dc.data()[idx] + dhv * ov * (1.0 - tanh_c * tanh_c);
                dpre[0].data_mut()[idx] = dcv * gv * iv * (1.0 - iv); // i gate
                dpre[1].data_mut()[idx] = dcv * s.c_prev.data()[idx] * fv * (1.0 - fv); // f
                dpre[2].data_mut()[idx] = dhv * tanh_c * ov * (1.0 - ov); // o
                dpre[3].data_mut()[idx] = dcv * iv * (1.0 - gv * gv); // g
                dc.data_mut()[idx] = dcv * fv;
            }
            dh.fill(0.0);
            for (gate, (w_idx, u_idx, b_idx)) in
                [(WI, UI, BI), (WF, UF, BF), (WO, UO, BO), (WG, UG, BG)]
                    .into_iter()
                    .enumerate()
            {
                let dp = &dpre[gate];
                // parameter gradients
                {
                    let w_grad = self.params[w_idx].grad.data_mut();
                    for row in 0..batch {
                        for k in 0..u {
                            let g = dp.at2(row, k);
                            for j in 0..feat {
                                w_grad[k * feat + j] += g * s.x.at2(row, j);
                            }
                        }
                    }
                }
                {
                    let u_grad = self.params[u_idx].grad.data_mut();
                    for row in 0..batch {
                        for k in 0..u {
                            let g = dp.at2(row, k);
                            for j in 0..u {
                                u_grad[k * u + j] += g * s.h_prev.at2(row, j);
                            }
                        }
                    }
                }
                {
                    let b_grad = self.params[b_idx].grad.data_mut();
                    for row in 0..batch {
                        for k in 0..u {
                            b_grad[k] += dp.at2(row, k);
                        }
                    }
                }
                // input and recurrent-state gradients
                let w = self.params[w_idx].value.data();
                let uu = self.params[u_idx].value.data();
                for row in 0..batch {
                    for k in 0..u {
                        let g = dp.at2(row, k);
                        if g == 0.0 {
                            continue;
                        }
                        for j in 0..feat {
                            *dx_seq.at3_mut(row, t, j) += g * w[k * feat + j];
                        }
                        for j in 0..u {
                            *dh.at2_mut(row, j) += g * uu[k * u + j];
                        }
                    }
                }
            }
        }
        Ok(dx_seq)
    }

    fn params(&self) -> Vec<&Param> {
        self.params.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.params.iter_mut().collect()
    }

    fn trainable(&self) -> bool {
        self.trainable
    }

    fn set_trainable(&mut self, flag: bool) {
        self.trainable = flag;
    }
}
