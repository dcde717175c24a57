//! Dense row-major `f32` tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::stats;

/// Immutable dense tensor. Every cell is finite and `data.len()` equals the
/// product of `shape`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_shape(&shape)?;
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: vec![data.len()],
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("tensor data"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Result<Self> {
        check_shape(&shape)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("fill value"));
        }
        let len = shape.iter().product();
        Ok(Self {
            shape,
            data: vec![value; len],
        })
    }

    /// Construction for buffers produced inside the crate whose shape is
    /// already known to be consistent. Finiteness is still checked.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>, what: &'static str) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(what));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: self.shape.clone(),
            });
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    /// Element at a multi-index.
    pub fn get(&self, index: &[usize]) -> Option<f32> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &n) in index.iter().zip(&self.shape) {
            if i >= n {
                return None;
            }
            flat = flat * n + i;
        }
        Some(self.data[flat])
    }

    /// Channel `c` of a `[C, H, W]` tensor as a flat slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        assert_eq!(self.shape.len(), 3, "channel() needs a rank-3 tensor");
        let plane = self.shape[1] * self.shape[2];
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Elementwise map; errors if any result is non-finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect(), "map result")
    }

    pub fn add_scalar(&self, c: f32) -> Result<Self> {
        self.map(|v| v + c)
    }

    /// Sum of all cells, accumulated in `f64`.
    pub fn sum(&self) -> f64 {
        sum(self)
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&n| n == 0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(())
}

/// I.i.d. `Normal(mean, stddev^2)` draws, consuming `rng`.
pub fn gaussian_sample(rng: &mut Rng, mean: f64, stddev: f64, shape: Vec<usize>) -> Result<Tensor> {
    if !(stddev >= 0.0) || !stddev.is_finite() {
        return Err(Error::invalid("stddev must be finite and nonnegative"));
    }
    if !mean.is_finite() {
        return Err(Error::invalid("mean must be finite"));
    }
    check_shape(&shape)?;
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.normal(mean, stddev) as f32).collect();
    Tensor::from_parts(shape, data, "gaussian sample")
}

pub fn sum(t: &Tensor) -> f64 {
    stats::sum(t.data())
}

/// Population variance of all cells.
pub fn variance(t: &Tensor) -> Result<f64> {
    stats::variance(t.data())
}

pub fn pearson_abs(x: &[f64], y: &[f64]) -> Result<f64> {
    stats::pearson_abs(x, y)
}
