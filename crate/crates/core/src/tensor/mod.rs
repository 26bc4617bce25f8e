//! Dense row-major matrices and vectors over `f64`.
//!
//! Only what the networks and diagnostics need: products, transposes,
//! norms, elementwise maps and a small real eigenvalue solver.

mod eigen;

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

pub use eigen::{eigenvalues_qr, Complex};

use crate::error::{Error, Result};

/// Column count up to which [`Matrix::spectral_norm`] uses Jacobi.
pub const JACOBI_MAX_DIM: usize = 64;

fn check_finite(data: &[f64], op: &'static str) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Dense vector. Dereferences to `[f64]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        check_finite(&data, "Vector::new")?;
        Ok(Vector(data))
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn from_slice(data: &[f64]) -> Self {
        Vector(data.to_vec())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.dot(&self.0))
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "Matrix::new",
                expected: (rows, cols),
                found: (data.len(), 1),
            });
        }
        check_finite(&data, "Matrix::new")?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Matrix::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    /// Builds a matrix from equally long rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.as_ref().len(), c, "ragged rows");
            data.extend_from_slice(row.as_ref());
        }
        Matrix {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
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

    pub fn column(&self, j: usize) -> Vector {
        Vector((0..self.rows).map(|i| self.get(i, j)).collect())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                expected: (self.cols, other.cols),
                found: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in self.row(i).iter().enumerate() {
                if aik != 0.0 {
                    axpy(aik, other.row(k), out_row);
                }
            }
        }
        check_finite(&out.data, "matmul")?;
        Ok(out)
    }

    /// `out = self * x`, no shape or finiteness checks.
    pub(crate) fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    /// `out = selfᵀ * x`, no shape or finiteness checks.
    pub(crate) fn mul_t_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.row(i), out);
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                op: "mul_vec",
                expected: (self.cols, 1),
                found: (x.len(), 1),
            });
        }
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        check_finite(&out, "mul_vec")?;
        Ok(Vector(out))
    }

    pub fn mul_t_vec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                op: "mul_t_vec",
                expected: (self.rows, 1),
                found: (x.len(), 1),
            });
        }
        let mut out = vec![0.0; self.cols];
        self.mul_t_vec_into(x, &mut out);
        check_finite(&out, "mul_t_vec")?;
        Ok(Vector(out))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                expected: self.shape(),
                found: other.shape(),
            });
        }
        let data: Vec<f64> = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        check_finite(&data, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Result<Matrix> {
        self.elementwise_map(|x| s * x)
    }

    pub fn elementwise_map(&self, f: impl Fn(f64) -> f64) -> Result<Matrix> {
        let data: Vec<f64> = self.data.iter().map(|x| f(*x)).collect();
        check_finite(&data, "elementwise_map")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `‖A + Aᵀ‖_F`; zero iff the matrix is skew-symmetric.
    pub fn skew_residual(&self) -> f64 {
        assert!(self.is_square());
        let n = self.rows;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let s = self.get(i, j) + self.get(j, i);
                acc += s * s;
            }
        }
        libm::sqrt(acc)
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, in
    /// ascending order. Only the upper triangle is read.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<f64>> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch {
                op: "symmetric_eigenvalues",
                expected: (self.rows, self.rows),
                found: self.shape(),
            });
        }
        check_finite(&self.data, "symmetric_eigenvalues")?;
        let n = self.rows;
        let mut a = Matrix::from_fn(n, n, |i, j| if i <= j { self.get(i, j) } else { self.get(j, i) });
        let off = |a: &Matrix| {
            let mut s = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    s += a.get(i, j) * a.get(i, j);
                }
            }
            s
        };
        let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
        let mut sweeps = 0;
        while off(&a) > (f64::EPSILON * scale) * (f64::EPSILON * scale) {
            sweeps += 1;
            if sweeps > 100 {
                return Err(Error::NoConvergence {
                    op: "symmetric_eigenvalues",
                    iterations: 100,
                    residual: libm::sqrt(off(&a)) / scale,
                    last: f64::NAN,
                });
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a.get(p, q);
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / libm::sqrt(t * t + 1.0);
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a.get(k, p), a.get(k, q));
                        a.set(k, p, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a.get(p, k), a.get(q, k));
                        a.set(p, k, c * apk - s * aqk);
                        a.set(q, k, s * apk + c * aqk);
                    }
                }
            }
        }
        let mut ev = a.diagonal();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting. Fails on
    /// a pivot below `1e-14` times the largest entry.
    pub fn inverse(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch {
                op: "inverse",
                expected: (self.rows, self.rows),
                found: self.shape(),
            });
        }
        check_finite(&self.data, "inverse")?;
        let n = self.rows;
        let tiny = 1e-14 * self.max_abs().max(f64::MIN_POSITIVE);
        let mut a = self.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a.get(i, col).abs().total_cmp(&a.get(j, col).abs()))
                .expect("non-empty range");
            if a.get(piv, col).abs() <= tiny {
                return Err(Error::InvalidArgument(alloc::format!("singular matrix (pivot column {col})")));
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(piv * n + j, col * n + j);
                    inv.data.swap(piv * n + j, col * n + j);
                }
            }
            let p = 1.0 / a.get(col, col);
            for j in 0..n {
                a.data[col * n + j] *= p;
                inv.data[col * n + j] *= p;
            }
            for i in 0..n {
                if i != col {
                    let f = a.get(i, col);
                    if f != 0.0 {
                        for j in 0..n {
                            a.data[i * n + j] -= f * a.data[col * n + j];
                            inv.data[i * n + j] -= f * inv.data[col * n + j];
                        }
                    }
                }
            }
        }
        check_finite(&inv.data, "inverse")?;
        Ok(inv)
    }

    /// Largest singular value by power iteration on `AᵀA`.
    ///
    /// Converges when the Rayleigh quotient changes by less than `1e-10`
    /// relative, within 10 000 iterations.
    ///
    /// Matrices with at most [`JACOBI_MAX_DIM`] columns instead take the
    /// largest eigenvalue of `AᵀA` from cyclic Jacobi, which stays accurate
    /// when the top singular values are clustered.
    pub fn spectral_norm(&self) -> Result<f64> {
        const TOL: f64 = 1e-10;
        const MAX_ITER: usize = 10_000;
        check_finite(&self.data, "spectral_norm")?;
        if self.data.iter().all(|x| *x == 0.0) {
            return Ok(0.0);
        }
        if self.cols <= JACOBI_MAX_DIM {
            let gram = self.transpose().matmul(self)?;
            let top = gram.symmetric_eigenvalues()?.into_iter().fold(0.0, f64::max);
            return Ok(libm::sqrt(top));
        }
        let n = self.cols;
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64 + 0.01 * (i * i) as f64).collect();
        let nv = norm2(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mut av = vec![0.0; self.rows];
        let mut w = vec![0.0; n];
        let mut lambda = 0.0;
        let mut residual = f64::INFINITY;
        for _ in 0..MAX_ITER {
            self.mul_vec_into(&v, &mut av);
            self.mul_t_vec_into(&av, &mut w);
            let next = dot(&av, &av);
            let nw = norm2(&w);
            if nw == 0.0 {
                // v sits in the null space; perturb and retry
                v.iter_mut().enumerate().for_each(|(i, x)| *x += 1.0 / (i + 2) as f64);
                let nv = norm2(&v);
                v.iter_mut().for_each(|x| *x /= nv);
                continue;
            }
            residual = (next - lambda).abs() / next.max(f64::MIN_POSITIVE);
            lambda = next;
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / nw;
            }
            if residual < TOL {
                return Ok(libm::sqrt(lambda));
            }
        }
        Err(Error::NoConvergence {
            op: "spectral_norm",
            iterations: MAX_ITER,
            residual,
            last: libm::sqrt(lambda),
        })
    }
}

/// `a · b`, checked.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

pub fn transpose(a: &Matrix) -> Matrix {
    a.transpose()
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.frobenius_norm()
}

pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    a.spectral_norm()
}

pub fn elementwise_map(a: &Matrix, f: impl Fn(f64) -> f64) -> Result<Matrix> {
    a.elementwise_map(f)
}
