//! Dense N-dimensional `f64` tensor, last dimension fastest.
//!
//! All compute in the toolkit happens in 64-bit precision; the on-disk
//! sample format stores `f32` (see [`crate::volume_io`]).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("zero-length dimension in {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("rank {0} unsupported (must be 1..=5)")]
    BadRank(usize),
}

/// Flat `f64` storage plus dims. Indexing is row-major generalized to N
/// dims: the last dimension varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Tensor {
        let n: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Tensor, TensorError> {
        if dims.is_empty() || dims.len() > 5 {
            return Err(TensorError::BadRank(dims.len()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim(dims.to_vec()));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeMismatch {
                expected: dims.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reinterpret with new dims of the same total length.
    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor, TensorError> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                expected: dims.to_vec(),
                got: self.dims.clone(),
            });
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// 2-D access.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.dims.len(), 2);
        self.data[i * self.dims[1] + j]
    }

    #[inline]
    pub fn at2_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert_eq!(self.dims.len(), 2);
        let c = self.dims[1];
        &mut self.data[i * c + j]
    }

    /// 3-D access.
    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert_eq!(self.dims.len(), 3);
        self.data[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    #[inline]
    pub fn at3_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        debug_assert_eq!(self.dims.len(), 3);
        let (d1, d2) = (self.dims[1], self.dims[2]);
        &mut self.data[(i * d1 + j) * d2 + k]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
