//! Symmetric-matrix helpers built on one eigendecomposition path.
//!
//! Inversion, inverse square roots and PSD projection all go through
//! [`SymmetricEigen`], so their rounding behaviour is shared.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Absolute-plus-relative tolerance used for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-9;

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Largest `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// True when `m` is square and symmetric within `tol * max(1, max|m|)`.
pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && asymmetry(m) <= tol * max_abs(m).max(1.0)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(m.clone())
}

/// Rebuilds `V diag(f(lambda)) V^T` from an eigendecomposition.
pub fn rebuild(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let vals = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| f(l)));
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&vals);
    let out = scaled * eig.eigenvectors.transpose();
    symmetrize(&out)
}

/// Inverse of a symmetric positive definite matrix.
///
/// Fails with [`Error::Numerical`] tagged `tag` when the smallest eigenvalue
/// is not safely positive relative to the largest.
pub fn spd_inverse(m: &DMatrix<f64>, tag: &str) -> Result<DMatrix<f64>> {
    let eig = eigen(m);
    let (lo, hi) = extremes(&eig.eigenvalues);
    if !(lo > hi.abs() * 1e-13) || !lo.is_finite() {
        return Err(Error::Numerical {
            tag: tag.to_string(),
            detail: format!("matrix is singular or indefinite (eigenvalues in [{lo:e}, {hi:e}])"),
        });
    }
    Ok(rebuild(&eig, |l| 1.0 / l))
}

/// `m^{-1/2}` of a symmetric positive definite matrix.
pub fn spd_inverse_sqrt(m: &DMatrix<f64>, tag: &str) -> Result<DMatrix<f64>> {
    let eig = eigen(m);
    let (lo, hi) = extremes(&eig.eigenvalues);
    if !(lo > 0.0) || !hi.is_finite() {
        return Err(Error::Numerical {
            tag: tag.to_string(),
            detail: format!("matrix is not positive definite (smallest eigenvalue {lo:e})"),
        });
    }
    Ok(rebuild(&eig, |l| 1.0 / l.sqrt()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    extremes(&eigen(m).eigenvalues).0
}

fn extremes(vals: &DVector<f64>) -> (f64, f64) {
    vals.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Mean of `(x - y)(x - y)^T` over the given vector pairs.
pub fn difference_scatter<'a>(pairs: impl ExactSizeIterator<Item = (&'a [f64], &'a [f64])>, dim: usize) -> DMatrix<f64> {
    let n = pairs.len();
    let mut diffs = DMatrix::<f64>::zeros(n, dim);
    for (r, (x, y)) in pairs.enumerate() {
        for c in 0..dim {
            diffs[(r, c)] = x[c] - y[c];
        }
    }
    let scatter = diffs.transpose() * &diffs;
    symmetrize(&(scatter / n.max(1) as f64))
}
