//! Dense row-major matrices and the attention input/output containers.

use std::fmt::Debug;
use std::ops::{Add, Mul};

use crate::error::{Error, Result};

/// Floating point element stored in attention matrices.
///
/// Softmax statistics and output accumulators are always kept in `f64`,
/// whatever the element type.
pub trait Element:
    Copy + Default + Debug + PartialEq + Send + Sync + Add<Output = Self> + Mul<Output = Self> + 'static
{
    const ZERO: Self;
    const NAME: &'static str;

    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn is_finite(self) -> bool;
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const NAME: &'static str = "single";

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const NAME: &'static str = "double";

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Dot product with eight independent partial sums, combined in a fixed order.
#[inline]
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::ZERO; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] = lanes[l] + x[l] * y[l];
        }
    }
    let mut tail = T::ZERO;
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]))
        + tail
}

/// `acc += alpha * x`
#[inline]
pub(crate) fn axpy(acc: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += alpha * v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Element> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::ZERO; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} elements cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn cast<U: Element>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn to_f64(&self) -> Matrix<f64> {
        self.cast()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute elementwise difference, computed in `f64`.
    pub fn max_abs_diff<U: Element>(&self, other: &Matrix<U>) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Rows reordered so that row `a` of the result is row `order[a]` of `self`.
    pub fn gather_rows(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &src in order {
            data.extend_from_slice(self.row(src));
        }
        Self {
            rows: order.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Query, key and value matrices for one (batch, head) slot.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInputs<T> {
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    scale: f64,
}

impl<T: Element> AttentionInputs<T> {
    /// Builds inputs with the usual `1/sqrt(D)` scale.
    pub fn new(q: Matrix<T>, k: Matrix<T>, v: Matrix<T>) -> Result<Self> {
        let scale = 1.0 / (q.cols().max(1) as f64).sqrt();
        Self::with_scale(q, k, v, scale)
    }

    pub fn with_scale(q: Matrix<T>, k: Matrix<T>, v: Matrix<T>, scale: f64) -> Result<Self> {
        if q.shape() != k.shape() || q.shape() != v.shape() {
            return Err(Error::Shape(format!(
                "q {:?}, k {:?} and v {:?} must have identical dimensions",
                q.shape(),
                k.shape(),
                v.shape()
            )));
        }
        if q.rows() == 0 || q.cols() == 0 {
            return Err(Error::Shape("attention inputs must be non-empty".into()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        if !q.all_finite() {
            return Err(Error::NonFinite("q"));
        }
        if !k.all_finite() {
            return Err(Error::NonFinite("k"));
        }
        if !v.all_finite() {
            return Err(Error::NonFinite("v"));
        }
        Ok(Self { q, k, v, scale })
    }

    pub fn q(&self) -> &Matrix<T> {
        &self.q
    }

    pub fn k(&self) -> &Matrix<T> {
        &self.k
    }

    pub fn v(&self) -> &Matrix<T> {
        &self.v
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn n_tokens(&self) -> usize {
        self.q.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.q.cols()
    }

    pub fn cast<U: Element>(&self) -> AttentionInputs<U> {
        AttentionInputs {
            q: self.q.cast(),
            k: self.k.cast(),
            v: self.v.cast(),
            scale: self.scale,
        }
    }

    pub fn into_parts(self) -> (Matrix<T>, Matrix<T>, Matrix<T>, f64) {
        (self.q, self.k, self.v, self.scale)
    }
}

/// Attention output plus the per-row softmax statistics.
///
/// Fully-masked rows have a zero output row, `row_max = -inf` and
/// `row_sum = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput<T> {
    pub out: Matrix<T>,
    pub row_max: Vec<f64>,
    pub row_sum: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads<T> {
    pub dq: Matrix<T>,
    pub dk: Matrix<T>,
    pub dv: Matrix<T>,
}

impl<T: Element> AttentionGrads<T> {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            dq: Matrix::zeros(n, d),
            dk: Matrix::zeros(n, d),
            dv: Matrix::zeros(n, d),
        }
    }

    /// Maximum absolute difference over all three gradients.
    pub fn max_abs_diff<U: Element>(&self, other: &AttentionGrads<U>) -> f64 {
        self.dq
            .max_abs_diff(&other.dq)
            .max(self.dk.max_abs_diff(&other.dk))
            .max(self.dv.max_abs_diff(&other.dv))
    }

    /// Largest `|a - b| / max(|a|, |b|, floor)` over all entries.
    pub fn max_rel_diff<U: Element>(&self, other: &AttentionGrads<U>, floor: f64) -> f64 {
        let pairs = [
            (&self.dq, &other.dq),
            (&self.dk, &other.dk),
            (&self.dv, &other.dv),
        ];
        let mut worst = 0.0f64;
        for (a, b) in pairs {
            assert_eq!(a.shape(), b.shape());
            for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
                let (x, y) = (x.to_f64(), y.to_f64());
                let denom = x.abs().max(y.abs()).max(floor);
                worst = worst.max((x - y).abs() / denom);
            }
        }
        worst
    }

    pub fn cast<U: Element>(&self) -> AttentionGrads<U> {
        AttentionGrads {
            dq: self.dq.cast(),
            dk: self.dk.cast(),
            dv: self.dv.cast(),
        }
    }
}
