//! Dense symmetric matrices, eigendecomposition and the vec/Kronecker helpers
//! used by the rank test.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// A square matrix symmetrized as `(A + Aᵀ)/2` on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    inner: DMatrix<f64>,
}

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::Dimension("empty matrix".into()));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self { inner: sym })
    }

    /// Builds from an entry function evaluated on the upper triangle only.
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self { inner: m }
    }

    pub fn identity(dim: usize) -> Self {
        Self { inner: DMatrix::identity(dim, dim) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self { inner: DMatrix::from_diagonal(&DVector::from_column_slice(diag)) }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { inner: &self.inner * factor }
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    /// Σᵢⱼ Aᵢⱼ², which equals trace(A²) for symmetric A.
    pub fn frobenius_sq(&self) -> f64 {
        self.inner.iter().map(|v| v * v).sum()
    }

    /// Principal submatrix on `idx` (rows and columns in the given order).
    pub fn select(&self, idx: &[usize]) -> Self {
        let k = idx.len();
        let mut m = DMatrix::zeros(k, k);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                m[(a, b)] = self.inner[(i, j)];
            }
        }
        Self { inner: m }
    }

    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        v.dot(&(&self.inner * &v))
    }

    pub fn is_finite(&self) -> bool {
        self.inner.iter().all(|v| v.is_finite())
    }
}

/// Eigenvalues sorted descending with aligned, orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenPair {
    pub fn smallest(&self) -> (f64, DVector<f64>) {
        let last = self.values.len() - 1;
        (self.values[last], self.vectors.column(last).into_owned())
    }

    pub fn largest(&self) -> f64 {
        self.values[0]
    }
}

/// Full symmetric eigendecomposition, descending order. Each eigenvector is
/// signed so that its first non-negligible component is positive.
pub fn sym_eigen(m: &SymMatrix) -> Result<EigenPair> {
    if !m.is_finite() {
        return Err(Error::NumericalFailure("non-finite matrix entry".into()));
    }
    let eig = SymmetricEigen::try_new(m.inner.clone(), EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(
        || Error::NumericalFailure("symmetric eigensolver did not converge".into()),
    )?;
    let n = m.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        let scale = col.amax();
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-12 * scale.max(1e-300)) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(dst, &col);
    }
    Ok(EigenPair { values, vectors })
}

/// Solves `(a + ridge·I) x = b`, returning the minimum-norm least-squares
/// solution when the shifted matrix is singular.
pub fn solve_spd(a: &SymMatrix, b: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Dimension(format!("rhs length {} != matrix dim {}", b.len(), n)));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Domain(format!("ridge must be non-negative, got {ridge}")));
    }
    let shifted = &a.inner + DMatrix::identity(n, n) * ridge;
    let eig = sym_eigen(&SymMatrix { inner: shifted.clone() })?;
    let top = eig.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let bottom = eig.values[n - 1];
    if bottom < -1e-10 * top.max(f64::MIN_POSITIVE) {
        return Err(Error::NumericalFailure(format!(
            "matrix is indefinite (smallest eigenvalue {bottom:e}, largest {top:e})"
        )));
    }
    let rhs = DVector::from_column_slice(b);
    if let Some(chol) = shifted.clone().cholesky() {
        if bottom > 1e-13 * top {
            let x = chol.solve(&rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x.iter().copied().collect());
            }
        }
    }
    // pseudo-inverse through the spectrum
    let cutoff = 1e-13 * top;
    let mut x = DVector::zeros(n);
    for k in 0..n {
        let lam = eig.values[k];
        if lam > cutoff {
            let v = eig.vectors.column(k);
            x += v * (v.dot(&rhs) / lam);
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("solve produced non-finite values".into()));
    }
    Ok(x.iter().copied().collect())
}

/// Row-major vectorization: `vec(A)[(i−1)t + j] = A[i, j]`.
pub fn vec(m: &DMatrix<f64>) -> Vec<f64> {
    let (s, t) = m.shape();
    let mut out = Vec::with_capacity(s * t);
    for i in 0..s {
        for j in 0..t {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape {} values into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, v))
}

/// Kronecker product of two vectors, ordered consistently with [`vec`] so that
/// `(u⊗v)ᵀ vec(M) = uᵀ M v`.
pub fn kron_vec(u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!(
            "kron_vec needs equal lengths, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect())
}
