//! Dense real matrices, one-sided Jacobi SVD, pseudo-inverse and rank.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{invalid, Error, Result};

/// Relative singular-value cutoff used for pseudo-inverses and ranks.
pub const DEFAULT_RANK_TOL: f64 = 1e-6;

const JACOBI_EPS: f64 = 1e-15;
const MAX_SWEEPS: usize = 60;

/// Row-major dense `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid!("{} values do not fill a {rows}x{cols} matrix", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.ensure_shape(other.shape())?;
        Ok(self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn ensure_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::Shape { expected: shape, got: self.shape() });
        }
        Ok(())
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape { expected: (self.cols, rhs.cols), got: rhs.shape() });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.ensure_shape(rhs.shape())?;
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { data, ..self.clone() })
    }

    /// Rows `rows` of `self`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix { rows: rows.len(), cols: self.cols, data }
    }

    fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|c| (0..self.rows).map(|r| self[(r, c)]).collect()).collect()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ`, singular values in
/// descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hestenes one-sided Jacobi: orthogonalises the columns in place and applies
/// the same rotations to `v` when given.
fn jacobi_orthogonalize(cols: &mut [Vec<f64>], mut v: Option<&mut [Vec<f64>]>) {
    let n = cols.len();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_EPS * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                rotate(&mut left[p], &mut right[0], c, s);
                if let Some(v) = v.as_deref_mut() {
                    let (left, right) = v.split_at_mut(q);
                    rotate(&mut left[p], &mut right[0], c, s);
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// `R` factor (`n x n`, as columns) of a Householder QR of a tall matrix
/// given by its columns. Singular values of `R` equal those of the input.
fn householder_r(mut cols: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = cols.len();
    let m = cols.first().map_or(0, Vec::len);
    for k in 0..n.min(m) {
        let norm = libm::sqrt(cols[k][k..].iter().map(|x| x * x).sum::<f64>());
        if norm == 0.0 {
            continue;
        }
        let alpha = if cols[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = cols[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for col in cols.iter_mut().skip(k) {
            let proj = 2.0 * dot(&v, &col[k..]) / vnorm2;
            for (c, vi) in col[k..].iter_mut().zip(&v) {
                *c -= proj * vi;
            }
        }
    }
    cols.into_iter().map(|mut c| {
        c.truncate(n);
        c
    })
    .collect()
}

impl Matrix {
    /// Full thin SVD.
    pub fn svd(&self) -> Result<Svd> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        if self.rows < self.cols {
            let t = self.transpose().svd()?;
            return Ok(Svd { u: t.v, s: t.s, v: t.u });
        }
        let n = self.cols;
        let mut cols = self.columns();
        let mut v: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        jacobi_orthogonalize(&mut cols, Some(&mut v));

        let mut order: Vec<(usize, f64)> =
            cols.iter().map(|c| libm::sqrt(dot(c, c))).enumerate().collect();
        order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(core::cmp::Ordering::Equal));

        let mut u = Matrix::zeros(self.rows, n);
        let mut vm = Matrix::zeros(n, n);
        let mut s = Vec::with_capacity(n);
        for (j, &(src, sigma)) in order.iter().enumerate() {
            s.push(sigma);
            for r in 0..self.rows {
                u[(r, j)] = if sigma > 0.0 { cols[src][r] / sigma } else { 0.0 };
            }
            for r in 0..n {
                vm[(r, j)] = v[src][r];
            }
        }
        Ok(Svd { u, s, v: vm })
    }

    /// Singular values in descending order (QR-preconditioned Jacobi, no
    /// singular vectors).
    pub fn singular_values(&self) -> Result<Vec<f64>> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        let tall = if self.rows >= self.cols { self.clone() } else { self.transpose() };
        let cols = tall.columns();
        let mut cols = if tall.rows > tall.cols { householder_r(cols) } else { cols };
        jacobi_orthogonalize(&mut cols, None);
        let mut s: Vec<f64> = cols.iter().map(|c| libm::sqrt(dot(c, c))).collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
        Ok(s)
    }

    /// Number of singular values above `tol * σ_max`.
    pub fn rank(&self, tol: f64) -> Result<usize> {
        if !self.is_finite() {
            return Err(Error::NonFinite("matrix"));
        }
        let s = self.singular_values()?;
        let cutoff = tol * s.first().copied().unwrap_or(0.0);
        Ok(s.iter().filter(|&&x| x > cutoff && x > 0.0).count())
    }

    /// Moore-Penrose pseudo-inverse, discarding singular values at or below
    /// `tol * σ_max`.
    pub fn pinv(&self, tol: f64) -> Result<Matrix> {
        let Svd { u, s, v } = self.svd()?;
        let cutoff = tol * s.first().copied().unwrap_or(0.0);
        let mut out = Matrix::zeros(self.cols, self.rows);
        for (k, &sigma) in s.iter().enumerate() {
            if sigma <= cutoff || sigma == 0.0 {
                continue;
            }
            let inv = 1.0 / sigma;
            for i in 0..self.cols {
                let vik = v[(i, k)] * inv;
                if vik == 0.0 {
                    continue;
                }
                for j in 0..self.rows {
                    out[(i, j)] += vik * u[(j, k)];
                }
            }
        }
        Ok(out)
    }
}
