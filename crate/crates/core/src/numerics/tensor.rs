use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{shape_err, Result};

/// Floating-point element type. Training runs in `f32`; oracles and
/// gradient checks rerun the same code in `f64`.
pub trait Real:
    Float + Default + Debug + Display + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor. Every dimension is positive and the element
/// count always equals the product of the dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f32> {
    dims: Vec<usize>,
    data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn new(dims: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(shape_err!("dims must be non-empty and positive, got {dims:?}"));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(shape_err!("dims {dims:?} need {n} values, got {}", data.len()));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims.to_vec(), vec![S::zero(); n])
    }

    pub fn scalar(v: S) -> Self {
        Tensor { dims: vec![1], data: vec![v] }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Leading dimension of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        self.dims[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.rows() {
            return Err(shape_err!("row slice [{start},{end}) out of 0..{}", self.rows()));
        }
        let c = self.cols();
        let mut dims = self.dims.clone();
        dims[0] = end - start;
        Self::new(dims, self.data[start * c..end * c].to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| T::of(v.f64())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<S>) -> Option<f64> {
        if self.dims != other.dims {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a.f64() - b.f64()).abs())
                .fold(0.0, f64::max),
        )
    }
}

/// Numerically stable log(Σ exp(x)). Returns -inf for empty or all -inf input.
pub fn logsumexp<S: Real>(xs: &[S]) -> S {
    let m = xs.iter().copied().fold(S::neg_infinity(), S::max);
    if m == S::neg_infinity() {
        return m;
    }
    let s: S = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Two-argument logsumexp.
#[inline]
pub fn log_add<S: Real>(a: S, b: S) -> S {
    if a == S::neg_infinity() {
        return b;
    }
    if b == S::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
