//! Cholesky parameterization of symmetric positive definite matrices.
//!
//! An unconstrained vector `theta` of length `d(d+1)/2` maps to a lower
//! triangular factor `L` with exponentiated diagonal, and then to `L Lᵀ`.
//! Layout (0-based): strictly-lower entries come first in row-major order,
//! `L[i][j] = theta[i(i-1)/2 + j]` for `i > j`, followed by the diagonal,
//! `L[i][i] = exp(theta[d(d-1)/2 + i])`. In 1-based terms this is
//! `theta_{(i-2)(i-1)/2+j}` and `theta_{d(d-1)/2+i}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Asymmetry tolerated by [`parameterize`] before it refuses the input.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Number of free parameters of a `d x d` Cholesky factor.
pub fn cholesky_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

#[inline]
fn offdiag_index(i: usize, j: usize) -> usize {
    debug_assert!(i > j);
    i * (i - 1) / 2 + j
}

#[inline]
fn diag_index(dim: usize, i: usize) -> usize {
    dim * (dim - 1) / 2 + i
}

/// Unconstrained parameters of an SPD matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CholeskyVector {
    theta: Vec<f64>,
    dim: usize,
}

impl CholeskyVector {
    pub fn new(theta: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if theta.len() != cholesky_len(dim) {
            return Err(Error::invalid(format!(
                "theta has {} entries, expected {} for dimension {dim}",
                theta.len(),
                cholesky_len(dim)
            )));
        }
        if let Some(k) = theta.iter().position(|t| !t.is_finite()) {
            return Err(Error::invalid(format!("theta[{k}] is not finite")));
        }
        Ok(Self { theta, dim })
    }

    /// All-zero parameters, i.e. the identity matrix.
    pub fn zeros(dim: usize) -> Self {
        Self {
            theta: vec![0.0; cholesky_len(dim)],
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.theta
    }
}

/// Per-entry units of `theta`: each strictly-lower entry is scaled by its
/// row's diagonal factor `L[i][i]`, log-diagonal entries by one.
pub(crate) fn row_scales(theta: &CholeskyVector) -> Vec<f64> {
    let d = theta.dim;
    let mut s = vec![1.0; theta.theta.len()];
    for i in 1..d {
        let lii = theta.theta[diag_index(d, i)].exp();
        for j in 0..i {
            s[offdiag_index(i, j)] = lii;
        }
    }
    s
}

/// A symmetric positive definite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Validates symmetry (exact after symmetrizing within tolerance) and
    /// positive definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let sym = checked_symmetrize(&m)?;
        if sym.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(format!(
                "{}x{} matrix failed Cholesky factorization",
                sym.nrows(),
                sym.ncols()
            )));
        }
        Ok(Self(sym))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl AsRef<DMatrix<f64>> for SpdMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Symmetrizes `m` as `(m + mᵀ)/2` if its asymmetry is within tolerance.
fn checked_symmetrize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::invalid(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let mut out = (m + m.transpose()) * 0.5;
    mirror_lower(&mut out);
    Ok(out)
}

/// Copies the lower triangle onto the upper triangle.
pub(crate) fn mirror_lower(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
}

/// Builds the lower-triangular factor `L(theta)`.
pub fn build_lower(theta: &CholeskyVector) -> DMatrix<f64> {
    let d = theta.dim;
    let t = &theta.theta;
    let mut l = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..i {
            l[(i, j)] = t[offdiag_index(i, j)];
        }
        l[(i, i)] = t[diag_index(d, i)].exp();
    }
    l
}

/// `L(theta) L(theta)ᵀ`, exactly symmetric.
pub fn materialize(theta: &CholeskyVector) -> SpdMatrix {
    let l = build_lower(theta);
    let mut a = &l * l.transpose();
    mirror_lower(&mut a);
    SpdMatrix(a)
}

/// Inverse of [`materialize`].
pub fn parameterize(a: &DMatrix<f64>) -> Result<CholeskyVector> {
    let sym = checked_symmetrize(a)?;
    let d = sym.nrows();
    let chol = sym.cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite(format!("{d}x{d} matrix failed Cholesky factorization"))
    })?;
    let l = chol.l();
    let mut theta = vec![0.0; cholesky_len(d)];
    for i in 0..d {
        for j in 0..i {
            theta[offdiag_index(i, j)] = l[(i, j)];
        }
        theta[diag_index(d, i)] = l[(i, i)].ln();
    }
    CholeskyVector::new(theta, d)
}

/// `diag(exp(2 theta_i))`: diagonal SPD matrix with `theta` in log-std space.
pub fn materialize_diagonal(theta_diag: &[f64]) -> SpdMatrix {
    let v = DVector::from_iterator(theta_diag.len(), theta_diag.iter().map(|t| (2.0 * t).exp()));
    SpdMatrix(DMatrix::from_diagonal(&v))
}

/// Inverse of [`materialize_diagonal`] on the diagonal of `a`.
pub fn parameterize_diagonal(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    a.diagonal()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v > 0.0 && v.is_finite() {
                Ok(0.5 * v.ln())
            } else {
                Err(Error::NotPositiveDefinite(format!(
                    "diagonal entry {i} is {v}"
                )))
            }
        })
        .collect()
}

/// Pulls a gradient with respect to `A = L Lᵀ` back to `theta`.
///
/// `a_bar` holds `dLoss/dA_ij` treating every entry as independent.
pub fn materialize_backward(theta: &CholeskyVector, a_bar: &DMatrix<f64>) -> Vec<f64> {
    let d = theta.dim;
    let l = build_lower(theta);
    let l_bar = (a_bar + a_bar.transpose()) * &l;
    let mut g = vec![0.0; cholesky_len(d)];
    for i in 0..d {
        for j in 0..i {
            g[offdiag_index(i, j)] = l_bar[(i, j)];
        }
        g[diag_index(d, i)] = l_bar[(i, i)] * l[(i, i)];
    }
    g
}

/// Pulls a gradient with respect to `diag(exp(2 theta))` back to `theta`.
pub fn materialize_diagonal_backward(theta_diag: &[f64], a_bar: &DMatrix<f64>) -> Vec<f64> {
    theta_diag
        .iter()
        .enumerate()
        .map(|(i, t)| 2.0 * a_bar[(i, i)] * (2.0 * t).exp())
        .collect()
}

/// Lifts the spectrum of a PSD estimate so its smallest eigenvalue is at
/// least `rel_eps` times the mean variance (or `rel_eps` for a zero matrix).
/// Well-conditioned matrices are returned unchanged.
pub fn with_jitter(a: &DMatrix<f64>, rel_eps: f64) -> DMatrix<f64> {
    let d = a.nrows();
    let scale = (a.trace() / d as f64).abs();
    let floor = if scale > 0.0 { rel_eps * scale } else { rel_eps };
    let sym = (a + a.transpose()) * 0.5;
    let lo = sym.clone().symmetric_eigenvalues().min();
    if lo >= floor && a.clone().cholesky().is_some() {
        return a.clone();
    }
    let mut eps = if lo < floor { floor - lo } else { floor };
    let mut out = sym.clone();
    for _ in 0..60 {
        out = &sym + DMatrix::identity(d, d) * eps;
        if out.clone().cholesky().is_some() {
            break;
        }
        eps *= 10.0;
    }
    out
}
