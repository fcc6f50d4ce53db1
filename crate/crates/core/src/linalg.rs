//! Dense symmetric positive definite solves for the small local systems.
//!
//! Matrices are never inverted explicitly; everything goes through a Cholesky
//! factor. A failed factorization is retried once with a diagonal jitter of
//! `1e-10 * mean(diag)`; each retry is logged and counted.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

static JITTER_RETRIES: AtomicUsize = AtomicUsize::new(0);

/// Number of factorizations (process-wide) that needed the jitter retry.
pub fn jitter_retries() -> usize {
    JITTER_RETRIES.load(Ordering::Relaxed)
}

/// Row-major dense matrix.
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
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.as_ref().len() != cols {
                return Err(Error::Shape("ragged matrix rows".into()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self { rows: rows.len(), cols, data })
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

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        self.data.chunks_exact(self.cols).map(|r| dot(r, x)).collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
    jitter: Option<f64>,
}

impl Cholesky {
    /// Factor `a`, retrying once with diagonal jitter on failure.
    pub fn factor(a: &Matrix) -> Result<Self> {
        match Self::factor_strict(a) {
            Ok(c) => Ok(c),
            Err(Error::Singular { minor, .. }) => {
                let diag = a.diagonal();
                let mean = diag.iter().sum::<f64>() / diag.len() as f64;
                let jitter = 1e-10 * mean;
                if !(jitter > 0.0 && jitter.is_finite()) {
                    return Err(Error::Singular { minor, context: None });
                }
                let mut l = Self::decompose(a, jitter)?;
                JITTER_RETRIES.fetch_add(1, Ordering::Relaxed);
                log::warn!("cholesky failed at leading minor {minor}; retried with jitter {jitter:e}");
                l.jitter = Some(jitter);
                Ok(l)
            }
            Err(e) => Err(e),
        }
    }

    /// Factor `a` without any retry.
    pub fn factor_strict(a: &Matrix) -> Result<Self> {
        Self::decompose(a, 0.0)
    }

    fn decompose(a: &Matrix, jitter: f64) -> Result<Self> {
        if !a.is_square() || a.rows() == 0 {
            return Err(Error::Shape(format!("expected a non-empty square matrix, got {}x{}", a.rows(), a.cols())));
        }
        let n = a.rows();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s = a[(i, j)] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
                if i == j {
                    let s = s + jitter;
                    if !s.is_finite() || s <= 0.0 {
                        return Err(Error::Singular { minor: i + 1, context: None });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l, jitter: None })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Diagonal jitter that was added, if the retry path was taken.
    pub fn jitter(&self) -> Option<f64> {
        self.jitter
    }

    pub fn lower(&self) -> Matrix {
        Matrix { rows: self.n, cols: self.n, data: self.l.clone() }
    }

    /// Solve `L z = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let s = b[i] - dot(&self.l[i * n..i * n + i], &b[..i]);
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solve `L^T x = z` in place.
    pub fn backward_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let s = b[i] - (i + 1..n).map(|k| self.l[k * n + i] * b[k]).sum::<f64>();
            b[i] = s / self.l[i * n + i];
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        self.forward_in_place(b);
        self.backward_in_place(b);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        assert_eq!(b.rows(), self.n);
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let x = self.solve(&b.column(j));
            for (i, v) in x.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    /// `y^T A^{-1} y` computed as `|L^{-1} y|^2`.
    pub fn quad_form(&self, y: &[f64]) -> f64 {
        let mut z = y.to_vec();
        self.forward_in_place(&mut z);
        dot(&z, &z)
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>() * 2.0
    }
}

pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(Error::Shape(format!("rhs length {} for a {}x{} system", b.len(), a.rows(), a.cols())));
    }
    Ok(Cholesky::factor(a)?.solve(b))
}

pub fn solve_spd_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != a.rows() {
        return Err(Error::Shape(format!("rhs has {} rows for a {}x{} system", b.rows(), a.rows(), a.cols())));
    }
    Ok(Cholesky::factor(a)?.solve_matrix(b))
}

pub fn quad_form(a: &Matrix, y: &[f64]) -> Result<f64> {
    if y.len() != a.rows() {
        return Err(Error::Shape(format!("vector length {} for a {}x{} matrix", y.len(), a.rows(), a.cols())));
    }
    Ok(Cholesky::factor(a)?.quad_form(y))
}

/// Ordinary least squares via Householder QR. Fails on a numerically
/// rank-deficient design.
pub fn least_squares(design: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = (design.rows(), design.cols());
    if y.len() != m {
        return Err(Error::Shape(format!("{} responses for {m} design rows", y.len())));
    }
    if m < n {
        return Err(Error::DegenerateDesign(format!("{m} rows for {n} columns")));
    }
    // Column-major working copy.
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| design.column(j)).collect();
    let mut b = y.to_vec();
    let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    for j in 0..n {
        let norm = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale.max(f64::MIN_POSITIVE) * (m as f64).sqrt() {
            return Err(Error::DegenerateDesign(format!("column {j} is linearly dependent on earlier columns")));
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm_sq = dot(&v, &v);
        if vnorm_sq > 0.0 {
            for col in a.iter_mut().skip(j) {
                let f = 2.0 * dot(&v, &col[j..]) / vnorm_sq;
                for (c, vi) in col[j..].iter_mut().zip(&v) {
                    *c -= f * vi;
                }
            }
            let f = 2.0 * dot(&v, &b[j..]) / vnorm_sq;
            for (c, vi) in b[j..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
    }
    let mut beta = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k][i] * beta[k];
        }
        beta[i] = s / a[i][i];
    }
    Ok(beta)
}
