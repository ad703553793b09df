//! Dense row-major matrices and the handful of BLAS-style kernels the
//! pipeline needs.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_len, Result};

/// Row-major dense `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure_len("matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Entries drawn i.i.d. from N(0, variance).
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, variance: f64, rng: &mut R) -> Self {
        let sd = libm::sqrt(variance);
        Self::from_fn(rows, cols, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
    }

    /// Stacks equally long rows into a matrix.
    pub fn from_rows<S: AsRef<[f64]>>(rows: &[S]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            ensure_len("matrix row", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact(0) panics
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        axpy(scale, &other.data, &mut self.data);
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    /// y = self · x
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_len("matvec input", self.cols, x.len())?;
        Ok(self.row_iter().map(|row| dot(row, x)).collect())
    }

    /// y = selfᵀ · x
    pub fn matvec_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_len("transposed matvec input", self.rows, x.len())?;
        let mut y = vec![0.0; self.cols];
        for (row, &xi) in self.row_iter().zip(x) {
            axpy(xi, row, &mut y);
        }
        Ok(y)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Whether an operand enters [`gemm`] as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// `c = alpha · op(a) · op(b) + beta · c`.
///
/// Panics when the shapes do not conform; callers validate user-facing
/// shapes before reaching this point.
pub fn gemm(alpha: f64, a: &Matrix, op_a: Op, b: &Matrix, op_b: Op, beta: f64, c: &mut Matrix) {
    let (m, k, rsa, csa) = match op_a {
        Op::N => (a.rows, a.cols, a.cols as isize, 1),
        Op::T => (a.cols, a.rows, 1, a.cols as isize),
    };
    let (kb, n, rsb, csb) = match op_b {
        Op::N => (b.rows, b.cols, b.cols as isize, 1),
        Op::T => (b.cols, b.rows, 1, b.cols as isize),
    };
    assert_eq!(k, kb, "gemm inner dimensions");
    assert_eq!((m, n), c.shape(), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.data.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the strides and extents describe exactly the buffers of `a`,
    // `b` and `c`, whose shapes were checked above; `c` is borrowed mutably
    // and cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// Convenience wrapper allocating the product `op(a) · op(b)`.
pub fn matmul(a: &Matrix, op_a: Op, b: &Matrix, op_b: Op) -> Matrix {
    let m = if op_a == Op::N { a.rows } else { a.cols };
    let n = if op_b == Op::N { b.cols } else { b.rows };
    let mut c = Matrix::zeros(m, n);
    gemm(1.0, a, op_a, b, op_b, 0.0, &mut c);
    c
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2_sq(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(norm2_sq(a))
}

pub fn axpy(scale: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += scale * xi;
    }
}

/// Largest singular value of `a`, estimated with `iters` power-iteration
/// steps on `aᵀa` starting from the all-ones vector.
pub fn spectral_norm_estimate(a: &Matrix, iters: usize) -> f64 {
    if a.rows == 0 || a.cols == 0 {
        return 0.0;
    }
    let mut x = vec![1.0 / libm::sqrt(a.cols as f64); a.cols];
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        let ax = a.matvec(&x).expect("shape");
        let atax = a.matvec_t(&ax).expect("shape");
        let n = norm2(&atax);
        if n == 0.0 {
            return 0.0;
        }
        sigma = libm::sqrt(n);
        x.iter_mut().zip(&atax).for_each(|(xi, v)| *xi = v / n);
    }
    sigma
}
