//! Dense linear algebra, activations, and seeded initialization.
//!
//! Everything here is generic over [`Real`] so the same code runs in 32-bit
//! (training, inference) and 64-bit (gradient verification).

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, Deref, DerefMut, DivAssign, MulAssign, SubAssign};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Floating-point element type of vectors, matrices and model parameters.
pub trait Real:
    num_traits::Float
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MathError {
    #[error("shape mismatch: {left} vs {right}")]
    Shape { left: String, right: String },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("empty vector")]
    Empty,
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    ZeroDim { rows: usize, cols: usize },
}

impl MathError {
    pub(crate) fn shape(left: impl Into<String>, right: impl Into<String>) -> Self {
        MathError::Shape {
            left: left.into(),
            right: right.into(),
        }
    }
}

/// Non-empty dense vector.
#[derive(Clone, PartialEq)]
pub struct Vector<F> {
    data: Vec<F>,
}

impl<F: Real> Vector<F> {
    pub fn new(data: Vec<F>) -> Result<Self, MathError> {
        if data.is_empty() {
            return Err(MathError::Empty);
        }
        Ok(Vector { data })
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "vector length must be positive");
        Vector {
            data: vec![F::zero(); len],
        }
    }

    pub fn from_f64(values: &[f64]) -> Result<Self, MathError> {
        Self::new(values.iter().map(|&x| F::from_f64(x)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }
}

impl<F> Deref for Vector<F> {
    type Target = [F];
    fn deref(&self) -> &[F] {
        &self.data
    }
}

impl<F> DerefMut for Vector<F> {
    fn deref_mut(&mut self) -> &mut [F] {
        &mut self.data
    }
}

impl<F: Debug> Debug for Vector<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.iter()).finish()
    }
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Matrix<F> {
    pub fn new(rows: usize, cols: usize, data: Vec<F>) -> Result<Self, MathError> {
        if rows == 0 || cols == 0 {
            return Err(MathError::ZeroDim { rows, cols });
        }
        if rows * cols != data.len() {
            return Err(MathError::shape(
                format!("{rows}x{cols}"),
                format!("data of length {}", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = F::one();
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, MathError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(MathError::shape(
                    format!("row of length {cols}"),
                    format!("row of length {}", r.len()),
                ));
            }
            data.extend(r.iter().map(|&x| F::from_f64(x)));
        }
        Self::new(rows.len(), cols, data)
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

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: F) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Element-wise conversion to another precision.
    pub fn cast<G: Real>(&self) -> Matrix<G> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| G::from_f64(x.as_f64())).collect(),
        }
    }
}

impl<F: Debug> Debug for Matrix<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix[{}x{}]", self.rows, self.cols)?;
        f.debug_list().entries(self.data.iter()).finish()
    }
}

pub fn matvec<F: Real>(m: &Matrix<F>, v: &[F]) -> Result<Vector<F>, MathError> {
    if v.len() != m.cols {
        return Err(MathError::shape(
            format!("matrix {}x{}", m.rows, m.cols),
            format!("vector of length {}", v.len()),
        ));
    }
    let mut out = vec![F::zero(); m.rows];
    gemv_acc(&mut out, m, v);
    Vector::new(out)
}

/// `out += m · v`; shapes are the caller's responsibility.
#[inline]
pub(crate) fn gemv_acc<F: Real>(out: &mut [F], m: &Matrix<F>, v: &[F]) {
    debug_assert_eq!(out.len(), m.rows);
    debug_assert_eq!(v.len(), m.cols);
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(m.cols)) {
        let mut acc = F::zero();
        for (&a, &b) in row.iter().zip(v) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `out += mᵀ · v`.
#[inline]
pub(crate) fn gemv_t_acc<F: Real>(out: &mut [F], m: &Matrix<F>, v: &[F]) {
    debug_assert_eq!(out.len(), m.cols);
    debug_assert_eq!(v.len(), m.rows);
    for (&s, row) in v.iter().zip(m.data.chunks_exact(m.cols)) {
        if s == F::zero() {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(row) {
            *o += s * a;
        }
    }
}

/// `m += a · bᵀ`.
#[inline]
pub(crate) fn outer_acc<F: Real>(m: &mut Matrix<F>, a: &[F], b: &[F]) {
    debug_assert_eq!(a.len(), m.rows);
    debug_assert_eq!(b.len(), m.cols);
    let cols = m.cols;
    for (&s, row) in a.iter().zip(m.data.chunks_exact_mut(cols)) {
        if s == F::zero() {
            continue;
        }
        for (o, &x) in row.iter_mut().zip(b) {
            *o += s * x;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    // exp of a large positive argument overflows to inf, which still yields 0
    // through the division; branch to keep the intermediate finite anyway.
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn elementwise<F: Real>(v: &[F], f: Activation) -> Vec<F> {
    v.iter().map(|&x| f.apply(x)).collect()
}

pub fn softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let max = max_of(logits);
    let mut out: Vec<F> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: F = out.iter().copied().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// `ln Σ exp(x)` with max-subtraction.
pub fn log_sum_exp<F: Real>(logits: &[F]) -> F {
    let max = max_of(logits);
    let sum: F = logits.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn log_softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&x| x - lse).collect()
}

pub fn cross_entropy<F: Real>(logits: &[F], target: usize) -> Result<F, MathError> {
    if target >= logits.len() {
        return Err(MathError::Index {
            index: target,
            len: logits.len(),
        });
    }
    let loss = log_sum_exp(logits) - logits[target];
    // rounding can push a near-zero loss slightly negative
    Ok(loss.max(F::zero()))
}

/// Gradient of [`cross_entropy`] w.r.t. the logits: `softmax(logits) − onehot(target)`.
pub fn cross_entropy_grad<F: Real>(logits: &[F], target: usize) -> Result<Vec<F>, MathError> {
    if target >= logits.len() {
        return Err(MathError::Index {
            index: target,
            len: logits.len(),
        });
    }
    let mut g = softmax(logits);
    g[target] -= F::one();
    Ok(g)
}

fn max_of<F: Real>(xs: &[F]) -> F {
    xs.iter().copied().fold(F::neg_infinity(), F::max)
}

/// Deterministic generator used for every randomized operation in the crate.
///
/// ChaCha8 (from `rand_chacha`) seeded with `seed_from_u64`; its output
/// stream is specified independently of platform and endianness.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub(crate) fn fill_uniform<F: Real>(out: &mut [F], lo: f64, hi: f64, rng: &mut impl RngCore) {
    let lo_f = F::from_f64(lo);
    let hi_f = F::from_f64(hi);
    for o in out {
        let x = F::from_f64(lo + (hi - lo) * unit_f64(rng));
        // narrowing to 32 bits can round up onto the open bound
        *o = if x >= hi_f { lo_f } else { x };
    }
}

/// Matrix with i.i.d. entries uniform in `[lo, hi)`, reproducible from `seed`.
pub fn seeded_uniform<F: Real>(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Matrix<F> {
    assert!(lo < hi, "seeded_uniform requires lo < hi");
    let mut m = Matrix::zeros(rows, cols);
    fill_uniform(m.as_mut_slice(), lo, hi, &mut rng_from_seed(seed));
    m
}
