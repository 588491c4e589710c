//! Volume preprocessing: spline-interpolated zoom (SIZ) to a fixed grid,
//! Hounsfield windowing, in-plane rotation augmentation, and RGB-to-gray
//! conversion for video frames.
//!
//! Coordinate convention for resizing is align-corners: target index `i`
//! maps to source coordinate `i * (S-1) / (T-1)` for target extent `T > 1`
//! and to `(S-1)/2` for `T = 1`, so node queries reproduce source values
//! exactly. Cubic interpolation uses the natural interpolating spline
//! (second derivative zero at both ends).

use thiserror::Error;

use crate::tensor::Tensor;
use crate::volume_io::{Volume, VoxelDomain};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("query {0} outside sample range [0, {1}]")]
    QueryOutOfRange(f64, f64),
    #[error("axis has {got} samples, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("volume is already unit-normalized")]
    AlreadyNormalized,
    #[error("window lower bound {0} must be below upper bound {1}")]
    BadWindow(f64, f64),
    #[error("expected a 3-channel frame, got dims {0:?}")]
    BadChannelCount(Vec<usize>),
}

/// Spline order for resizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplineOrder {
    Linear,
    Cubic,
}

/// Target grid and interpolation order for [`siz_resize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResizeSpec {
    pub target_dims: (usize, usize, usize),
    pub order: SplineOrder,
}

/// Default Hounsfield window: lung window, air to soft tissue.
pub const DEFAULT_HU_WINDOW: (f64, f64) = (-1000.0, 400.0);

/// Rotation angles drawn during training augmentation, degrees. Includes 0
/// so the model also sees unaugmented data.
pub const AUGMENT_ANGLES_DEG: [f64; 7] = [-20.0, -10.0, -5.0, 0.0, 5.0, 10.0, 20.0];

/// Second derivatives of the natural cubic interpolating spline through
/// `y` at unit-spaced nodes. Thomas algorithm on the tridiagonal system
/// `m[i-1] + 4 m[i] + m[i+1] = 6 (y[i-1] - 2 y[i] + y[i+1])`,
/// with `m[0] = m[S-1] = 0`.
fn natural_spline_moments(y: &[f64]) -> Vec<f64> {
    let s = y.len();
    let mut m = vec![0.0; s];
    if s < 3 {
        return m;
    }
    let n = s - 2; // interior unknowns
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for i in 0..n {
        let rhs = 6.0 * (y[i] - 2.0 * y[i + 1] + y[i + 2]);
        if i == 0 {
            c_prime[0] = 1.0 / 4.0;
            d_prime[0] = rhs / 4.0;
        } else {
            let denom = 4.0 - c_prime[i - 1];
            c_prime[i] = 1.0 / denom;
            d_prime[i] = (rhs - d_prime[i - 1]) / denom;
        }
    }
    m[n] = d_prime[n - 1];
    for i in (0..n.saturating_sub(1)).rev() {
        m[i + 1] = d_prime[i] - c_prime[i] * m[i + 2];
    }
    m
}

/// Evaluate the interpolant defined by `samples` at unit-spaced nodes
/// `0..S-1` at each query coordinate. The interpolant passes exactly
/// through every node.
pub fn spline_interp_1d(
    samples: &[f64],
    queries: &[f64],
    order: SplineOrder,
) -> Result<Vec<f64>, PreprocessError> {
    let s = samples.len();
    if s < 2 {
        return Err(PreprocessError::TooFewSamples { got: s, need: 2 });
    }
    let hi = (s - 1) as f64;
    for &q in queries {
        if !(q >= -1e-9 && q <= hi + 1e-9) {
            return Err(PreprocessError::QueryOutOfRange(q, hi));
        }
    }
    let moments = match order {
        SplineOrder::Linear => None,
        SplineOrder::Cubic => Some(natural_spline_moments(samples)),
    };
    let out = queries
        .iter()
        .map(|&q| {
            let q = q.clamp(0.0, hi);
            let i = (q.floor() as usize).min(s - 2);
            let t = q - i as f64;
            let (y0, y1) = (samples[i], samples[i + 1]);
            match &moments {
                None => y0 * (1.0 - t) + y1 * t,
                Some(m) => {
                    let u = 1.0 - t;
                    y0 * u + y1 * t
                        + (u * u * u - u) * m[i] / 6.0
                        + (t * t * t - t) * m[i + 1] / 6.0
                }
            }
        })
        .collect();
    Ok(out)
}

/// Align-corners query coordinates for resizing an axis of extent `s`
/// to extent `t`.
fn axis_queries(s: usize, t: usize) -> Vec<f64> {
    if t == 1 {
        return vec![(s - 1) as f64 / 2.0];
    }
    let scale = (s - 1) as f64 / (t - 1) as f64;
    (0..t).map(|i| i as f64 * scale).collect()
}

/// Resize one axis of a rank-3 tensor by 1-D spline interpolation along it.
/// `axis` is 0 (depth), 1 (height) or 2 (width).
fn resize_axis(
    t: &Tensor,
    axis: usize,
    target: usize,
    order: SplineOrder,
) -> Result<Tensor, PreprocessError> {
    let d = t.dims().to_vec();
    let s = d[axis];
    if s == target {
        return Ok(t.clone());
    }
    if s < 2 {
        return Err(PreprocessError::TooFewSamples { got: s, need: 2 });
    }
    let queries = axis_queries(s, target);
    let mut out_dims = d.clone();
    out_dims[axis] = target;
    let mut out = Tensor::zeros(&out_dims);
    // Iterate over all lines along `axis`.
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut line = vec![0.0; s];
    for ia in 0..d[a] {
        for ib in 0..d[b] {
            for k in 0..s {
                let idx = match axis {
                    0 => (k, ia, ib),
                    1 => (ia, k, ib),
                    _ => (ia, ib, k),
                };
                line[k] = t.at3(idx.0, idx.1, idx.2);
            }
            let vals = spline_interp_1d(&line, &queries, order)?;
            for (k, &v) in vals.iter().enumerate() {
                let idx = match axis {
                    0 => (k, ia, ib),
                    1 => (ia, k, ib),
                    _ => (ia, ib, k),
                };
                *out.at3_mut(idx.0, idx.1, idx.2) = v;
            }
        }
    }
    Ok(out)
}

/// Spline-interpolated zoom: separable per-axis 1-D interpolation applied
/// depth, then height, then width. The value-domain tag is preserved.
pub fn siz_resize(vol: &Volume, spec: &ResizeSpec) -> Result<Volume, PreprocessError> {
    let (td, th, tw) = spec.target_dims;
    assert!(td >= 1 && th >= 1 && tw >= 1, "target dims must be positive");
    let mut t = vol.to_tensor();
    t = resize_axis(&t, 0, td, spec.order)?;
    t = resize_axis(&t, 1, th, spec.order)?;
    t = resize_axis(&t, 2, tw, spec.order)?;
    Ok(Volume::from_parts(
        (td, th, tw),
        t.data().to_vec(),
        vol.domain(),
    ))
}

/// Clip to the `(lo, hi)` Hounsfield window and map affinely to [0, 1].
pub fn hu_normalize(vol: &Volume, window: (f64, f64)) -> Result<Volume, PreprocessError> {
    if vol.domain() == VoxelDomain::UnitNormalized {
        return Err(PreprocessError::AlreadyNormalized);
    }
    let (lo, hi) = window;
    if lo >= hi {
        return Err(PreprocessError::BadWindow(lo, hi));
    }
    let span = hi - lo;
    let data = vol
        .data()
        .iter()
        .map(|&v| (v.clamp(lo, hi) - lo) / span)
        .collect();
    Ok(Volume::from_parts(
        vol.dims(),
        data,
        VoxelDomain::UnitNormalized,
    ))
}

/// Rotate every axial slice by `angle_deg` about the slice center using
/// bilinear resampling. Positive angles rotate counter-clockwise in (x, y)
/// with y down the rows. Samples falling outside the source slice become 0;
/// angle 0 returns an exact copy.
pub fn rotate_axial(vol: &Volume, angle_deg: f64) -> Volume {
    if angle_deg == 0.0 {
        return vol.clone();
    }
    let (d, h, w) = vol.dims();
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h - 1) as f64 / 2.0;
    let cx = (w - 1) as f64 / 2.0;
    let mut out = vec![0.0; d * h * w];
    for k in 0..d {
        let base = k * h * w;
        for i in 0..h {
            let ry = i as f64 - cy;
            for j in 0..w {
                let rx = j as f64 - cx;
                // inverse rotation back into the source slice
                let sx = cx + cos * rx + sin * ry;
                let sy = cy - sin * rx + cos * ry;
                if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                    continue;
                }
                let x0 = (sx.floor() as usize).min(w - 1);
                let y0 = (sy.floor() as usize).min(h - 1);
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let fx = sx - x0 as f64;
                let fy = sy - y0 as f64;
                let v00 = vol.at(k, y0, x0);
                let v01 = vol.at(k, y0, x1);
                let v10 = vol.at(k, y1, x0);
                let v11 = vol.at(k, y1, x1);
                out[base + i * w + j] = v00 * (1.0 - fy) * (1.0 - fx)
                    + v01 * (1.0 - fy) * fx
                    + v10 * fy * (1.0 - fx)
                    + v11 * fy * fx;
            }
        }
    }
    Volume::from_parts((d, h, w), out, vol.domain())
}

/// Per-pixel luma `0.299 R + 0.587 G + 0.114 B` of an (H, W, 3) frame.
pub fn rgb_to_gray(frame: &Tensor) -> Result<Tensor, PreprocessError> {
    let d = frame.dims();
    if d.len() != 3 || d[2] != 3 {
        return Err(PreprocessError::BadChannelCount(d.to_vec()));
    }
    let (h, w) = (d[0], d[1]);
    let mut out = Tensor::zeros(&[h, w]);
    for i in 0..h {
        for j in 0..w {
            *out.at2_mut(i, j) = 0.299 * frame.at3(i, j, 0)
                + 0.587 * frame.at3(i, j, 1)
                + 0.114 * frame.at3(i, j, 2);
        }
    }
    Ok(out)
}
