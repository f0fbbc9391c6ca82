//! Dense vector/matrix primitives, SVD-based norms, rank-one operators, and
//! utilities for the order induced by the cone of nonnegative operators.
//!
//! Singular value decompositions are routed through the eigendecomposition of
//! the Gram matrix on the smaller side; the solver calls these in a loop on
//! d x T data with small T, so the T x T route is the cheap one.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds from row-major entries; rejects shape mismatches and non-finite values.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("matrix must have at least one row and column"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { context: "matrix entries" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Square matrix with `d` on the diagonal.
    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Rank-one matrix `u v^T`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[f64]) {
        for (i, &v) in col.iter().enumerate() {
            self.set(i, j, v);
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// In-place `self += c * other`; shapes must already agree.
    pub fn axpy(&mut self, c: f64, other: &Self) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, got: x.len() });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, got: other.rows });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * out.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `tr(self^T other)`, the Frobenius inner product.
    pub fn frobenius_dot(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        Ok(())
    }

    fn check_finite(&self, context: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { context })
        }
    }
}

/// Symmetric positive semidefinite operator on `R^dim`.
///
/// Construction symmetrizes by averaging `(A + A^T) / 2`, which absorbs
/// floating-point drift in accumulated sums. Positive semidefiniteness is an
/// invariant of the trusted constructors (`rank_one`, nonnegative
/// combinations), not re-verified on every touch.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdOperator {
    dim: usize,
    data: Vec<f64>,
}

/// Relative asymmetry allowed before construction fails.
const SYMMETRY_RTOL: f64 = 1e-12;

impl PsdOperator {
    /// Builds from row-major entries of a symmetric matrix.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty("operator dimension must be positive"));
        }
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: data.len() });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { context: "operator entries" });
        }
        let scale = data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut sym = data;
        for i in 0..dim {
            for j in (i + 1)..dim {
                let a = sym[i * dim + j];
                let b = sym[j * dim + i];
                if (a - b).abs() > SYMMETRY_RTOL * scale.max(1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "operator is not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
                let avg = 0.5 * (a + b);
                sym[i * dim + j] = avg;
                sym[j * dim + i] = avg;
            }
        }
        Ok(Self { dim, data: sym })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut op = Self::zeros(dim);
        for i in 0..dim {
            op.data[i * dim + i] = 1.0;
        }
        op
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// In-place `self += c * w w^T`.
    pub fn add_scaled_rank_one(&mut self, c: f64, w: &[f64]) {
        debug_assert_eq!(w.len(), self.dim);
        for (i, &wv) in w.iter().enumerate() {
            let wi = c * wv;
            if wi == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.dim..(i + 1) * self.dim];
            for (cell, &wj) in row.iter_mut().zip(w) {
                *cell += wi * wj;
            }
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        Ok(Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        Ok(Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|x| c * x).collect() }
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let (vals, _) = symmetric_eigen(self.dim, &self.data);
        vals
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self.eigenvalues().last().expect("dim >= 1")
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Operator norm, `max |lambda_i|`.
    pub fn spectral_norm(&self) -> f64 {
        let vals = self.eigenvalues();
        vals[0].abs().max(vals[vals.len() - 1].abs())
    }

    pub fn as_matrix(&self) -> Matrix {
        Matrix { rows: self.dim, cols: self.dim, data: self.data.clone() }
    }

    /// `m`-th operator power via the spectral decomposition.
    pub fn power(&self, m: u32) -> Self {
        if m == 1 {
            return self.clone();
        }
        let (vals, vecs) = symmetric_eigen(self.dim, &self.data);
        let mut out = Self::zeros(self.dim);
        for (k, &lambda) in vals.iter().enumerate() {
            out.add_scaled_rank_one(lambda.powi(m as i32), &vecs.column(k));
        }
        out
    }
}

/// Top singular triplet `(u, sigma, v)` with `A v = sigma u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularTriplet {
    pub u: Vec<f64>,
    pub sigma: f64,
    pub v: Vec<f64>,
}

/// Thin SVD with singular values in descending order; `u`/`v` columns pair up
/// with `sigma[k]`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

/// Symmetric eigendecomposition, eigenvalues descending with matching
/// eigenvector columns.
fn symmetric_eigen(dim: usize, data: &[f64]) -> (Vec<f64>, Matrix) {
    let m = DMatrix::from_row_slice(dim, dim, data);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = Matrix::zeros(dim, dim);
    for (k, &i) in order.iter().enumerate() {
        for r in 0..dim {
            vecs.set(r, k, eig.eigenvectors[(r, i)]);
        }
    }
    (vals, vecs)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Full thin SVD through the Gram matrix on the smaller side.
pub fn svd(a: &Matrix) -> Result<Svd> {
    a.check_finite("svd input")?;
    let k = a.rows.min(a.cols);
    // Gram on the smaller side; eigenvectors give that side's singular vectors.
    let tall = a.rows >= a.cols;
    let gram = if tall {
        Matrix::from_fn(a.cols, a.cols, |i, j| {
            (0..a.rows).map(|r| a.get(r, i) * a.get(r, j)).sum()
        })
    } else {
        Matrix::from_fn(a.rows, a.rows, |i, j| {
            a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum()
        })
    };
    gram.check_finite("svd gram matrix")?;
    let (vals, vecs) = symmetric_eigen(gram.rows, &gram.data);
    // Eigenvalues below the Gram's relative noise floor are rounding
    // artifacts of exact zeros; sqrt would inflate them to ~1e-8 scale.
    let floor = vals[0].max(0.0) * 1e-13;
    let sigma: Vec<f64> = vals
        .iter()
        .take(k)
        .map(|&l| if l > floor { l.sqrt() } else { 0.0 })
        .collect();
    let mut u = Matrix::zeros(a.rows, k);
    let mut v = Matrix::zeros(a.cols, k);
    let tiny = sigma[0] * 1e-300;
    for (j, &sj) in sigma.iter().enumerate() {
        let w = vecs.column(j);
        if tall {
            v.set_column(j, &w);
            if sj > tiny && sj > 0.0 {
                let av = a.matvec(&w)?;
                u.set_column(j, &av.iter().map(|x| x / sj).collect::<Vec<_>>());
            }
        } else {
            u.set_column(j, &w);
            if sj > tiny && sj > 0.0 {
                let atu: Vec<f64> = (0..a.cols)
                    .map(|c| (0..a.rows).map(|r| a.get(r, c) * w[r]).sum::<f64>() / sj)
                    .collect();
                v.set_column(j, &atu);
            }
        }
        // Deterministic sign: first nonzero component of u positive.
        let flip = u
            .column(j)
            .iter()
            .find(|x| x.abs() > 1e-14)
            .map(|x| *x < 0.0)
            .unwrap_or(false);
        if flip {
            for r in 0..u.rows {
                let x = u.get(r, j);
                u.set(r, j, -x);
            }
            for r in 0..v.rows {
                let x = v.get(r, j);
                v.set(r, j, -x);
            }
        }
    }
    Ok(Svd { u, sigma, v })
}

/// Sum of singular values.
pub fn trace_norm(a: &Matrix) -> Result<f64> {
    a.check_finite("trace_norm input")?;
    Ok(svd(a)?.sigma.iter().sum())
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    a.check_finite("spectral_norm input")?;
    Ok(svd(a)?.sigma[0])
}

/// Leading singular triplet; errors on the zero matrix.
pub fn top_singular_triplet(a: &Matrix) -> Result<SingularTriplet> {
    a.check_finite("top_singular_triplet input")?;
    if a.data.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let dec = svd(a)?;
    let mut u = dec.u.column(0);
    let mut v = dec.v.column(0);
    let sigma = dec.sigma[0];
    // The zero-matrix case is excluded, but renormalize against drift.
    let (nu, nv) = (norm(&u), norm(&v));
    if nu > 0.0 && nv > 0.0 {
        u.iter_mut().for_each(|x| *x /= nu);
        v.iter_mut().for_each(|x| *x /= nv);
    }
    Ok(SingularTriplet { u, sigma, v })
}

/// The operator `w w^T`, i.e. `v -> <v, w> w`.
pub fn rank_one(w: &[f64]) -> Result<PsdOperator> {
    if w.is_empty() {
        return Err(Error::Empty("rank_one input vector"));
    }
    if !w.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite { context: "rank_one input vector" });
    }
    let mut op = PsdOperator::zeros(w.len());
    op.add_scaled_rank_one(1.0, w);
    Ok(op)
}

/// Smallest eigenvalue of `B - A`; `A` precedes `B` in the semidefinite order
/// exactly when this is nonnegative (up to tolerance).
pub fn psd_gap(a: &PsdOperator, b: &PsdOperator) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, got: b.dim });
    }
    Ok(b.sub(a)?.min_eigenvalue())
}
