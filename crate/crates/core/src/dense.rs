//! Thin wrappers over faer's dense factorizations.

use crate::error::{Error, Result};
use faer::linalg::solvers::Solve;
pub use faer::Mat;
use faer::Side;

pub type C64 = faer::c64;

pub fn from_rows(n: usize, m: usize, f: impl Fn(usize, usize) -> f64) -> Mat<f64> {
    Mat::from_fn(n, m, f)
}

pub fn mat_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum()).collect()
}

/// Solve `a x = b` by partially pivoted LU.
pub fn solve(a: &Mat<f64>, b: &[f64]) -> Vec<f64> {
    let lu = a.partial_piv_lu();
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = lu.solve(&rhs);
    (0..b.len()).map(|i| x[(i, 0)]).collect()
}

/// Cholesky factor of a symmetric positive definite matrix.
pub struct Cholesky {
    llt: faer::linalg::solvers::Llt<f64>,
}

impl Cholesky {
    pub fn new(a: &Mat<f64>, what: &str) -> Result<Self> {
        let llt = a.llt(Side::Lower).map_err(|e| Error::Assembly(format!("{what}: not positive definite ({e:?})")))?;
        Ok(Cholesky { llt })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.llt.solve(&rhs);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    /// Lower-triangular factor `L` with `A = L L^T`.
    pub fn factor(&self) -> Mat<f64> {
        self.llt.L().to_owned()
    }
}

pub fn eigenvalues(a: &Mat<f64>) -> Result<Vec<C64>> {
    a.eigenvalues().map_err(|e| Error::Eigen(format!("dense eigenvalue solve failed: {e:?}")))
}

/// Eigenvalues and eigenvectors (columns of the returned matrix).
pub fn eigen(a: &Mat<f64>) -> Result<(Vec<C64>, Mat<C64>)> {
    let e = a.eigen().map_err(|e| Error::Eigen(format!("dense eigen solve failed: {e:?}")))?;
    let s = e.S().column_vector();
    let vals = (0..a.nrows()).map(|i| s[i]).collect();
    Ok((vals, e.U().to_owned()))
}

pub fn singular_values(a: &Mat<f64>) -> Result<Vec<f64>> {
    a.singular_values().map_err(|e| Error::Eigen(format!("singular value solve failed: {e:?}")))
}

pub fn symmetric_eigenvalues(a: &Mat<f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::Eigen(format!("symmetric eigen solve failed: {e:?}")))
}

pub fn max_asymmetry(a: &Mat<f64>) -> f64 {
    let mut m = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..i {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    m
}
