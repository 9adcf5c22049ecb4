//! Sparse matrices and the direct/iterative solver pair used by every
//! elliptic and saddle-point solve. Factorization is faer's sparse LU.

use crate::error::{Error, Result};
use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

#[derive(Clone, Debug, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets { nrows, ncols, entries: Vec::new() }
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((r, c, v));
        }
    }

    pub fn build(&self) -> Result<SparseMatrix> {
        SparseMatrix::from_triplets(self.nrows, self.ncols, &self.entries)
    }
}

/// Compressed-column matrix (duplicates summed).
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    pub mat: SparseColMat<usize, f64>,
}

impl SparseMatrix {
    pub fn from_triplets(nrows: usize, ncols: usize, t: &[(usize, usize, f64)]) -> Result<Self> {
        let trip: Vec<Triplet<usize, usize, f64>> = t.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
        let mat = SparseColMat::try_new_from_triplets(nrows, ncols, &trip)
            .map_err(|e| Error::Assembly(format!("triplet assembly: {e:?}")))?;
        Ok(SparseMatrix { mat })
    }

    pub fn nrows(&self) -> usize {
        self.mat.nrows()
    }
    pub fn ncols(&self) -> usize {
        self.mat.ncols()
    }

    fn columns(&self) -> (&[usize], &[usize], &[f64]) {
        let s = self.mat.symbolic();
        (s.col_ptr(), s.row_idx(), self.mat.val())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let (cp, ri, val) = self.columns();
        let mut y = vec![0.0; self.nrows()];
        for c in 0..self.ncols() {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in cp[c]..cp[c + 1] {
                y[ri[k]] += val[k] * xc;
            }
        }
        y
    }

    pub fn mul_vec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let (cp, ri, val) = self.columns();
        (0..self.ncols())
            .map(|c| (cp[c]..cp[c + 1]).map(|k| val[k] * x[ri[k]]).sum())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let (cp, ri, val) = self.columns();
        let mut d = vec![0.0; self.nrows().min(self.ncols())];
        for c in 0..d.len() {
            for k in cp[c]..cp[c + 1] {
                if ri[k] == c {
                    d[c] += val[k];
                }
            }
        }
        d
    }

    pub fn norm_inf(&self) -> f64 {
        let (cp, ri, val) = self.columns();
        let mut rows = vec![0.0; self.nrows()];
        for c in 0..self.ncols() {
            for k in cp[c]..cp[c + 1] {
                rows[ri[k]] += val[k].abs();
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let (cp, ri, val) = self.columns();
        let mut m = Mat::zeros(self.nrows(), self.ncols());
        for c in 0..self.ncols() {
            for k in cp[c]..cp[c + 1] {
                m[(ri[k], c)] += val[k];
            }
        }
        m
    }

    /// Largest asymmetry `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let d = self.to_dense();
        let mut m = 0.0f64;
        for i in 0..d.nrows() {
            for j in 0..i {
                m = m.max((d[(i, j)] - d[(j, i)]).abs());
            }
        }
        m
    }
}

/// Max norm; any non-finite entry makes the result infinite.
pub fn norm_inf(v: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for x in v {
        if !x.is_finite() {
            return f64::INFINITY;
        }
        m = m.max(x.abs());
    }
    m
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Direct sparse solver with iterative refinement. Systems flagged symmetric
/// positive definite fall back to Jacobi-preconditioned conjugate gradients
/// when the factorization fails or refinement stalls.
pub struct LinearSolver {
    a: SparseMatrix,
    lu: Option<Lu<usize, f64>>,
    spd: bool,
    tol: f64,
    a_norm: f64,
    what: &'static str,
}

impl std::fmt::Debug for LinearSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearSolver")
            .field("what", &self.what)
            .field("n", &self.a.nrows())
            .field("spd", &self.spd)
            .finish()
    }
}

pub const DEFAULT_TOL: f64 = 1e-12;

impl LinearSolver {
    pub fn new(a: SparseMatrix, spd: bool, what: &'static str) -> Result<Self> {
        Self::with_tol(a, spd, what, DEFAULT_TOL)
    }

    pub fn with_tol(a: SparseMatrix, spd: bool, what: &'static str, tol: f64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Assembly(format!("{what}: non-square {}x{}", a.nrows(), a.ncols())));
        }
        let lu = a.mat.sp_lu().ok();
        if lu.is_none() && !spd {
            return Err(Error::Assembly(format!("{what}: sparse LU failed (singular system?)")));
        }
        let a_norm = a.norm_inf();
        Ok(LinearSolver { a, lu, spd, tol, a_norm, what })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.a
    }

    /// Normwise backward error `|r| / (|A| |x| + |b|)` in the max norm.
    pub fn backward_error(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = self.a.mul_vec(x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let den = self.a_norm * norm_inf(x) + norm_inf(b);
        if !den.is_finite() {
            return f64::INFINITY;
        }
        if den == 0.0 {
            0.0
        } else {
            norm_inf(&r) / den
        }
    }

    fn lu_solve(lu: &Lu<usize, f64>, b: &[f64]) -> Vec<f64> {
        let x = lu.solve(ColRef::from_slice(b));
        (0..b.len()).map(|i| x[i]).collect()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(Error::GridMismatch(format!("{}: rhs length {} vs {}", self.what, b.len(), self.dim())));
        }
        if b.iter().all(|v| *v == 0.0) {
            return Ok(vec![0.0; b.len()]);
        }
        let mut history = Vec::new();
        if let Some(lu) = &self.lu {
            let mut x = Self::lu_solve(lu, b);
            for _ in 0..3 {
                let be = self.backward_error(&x, b);
                history.push(be);
                if be <= self.tol {
                    return Ok(x);
                }
                let ax = self.a.mul_vec(&x);
                let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
                let d = Self::lu_solve(lu, &r);
                for (xi, di) in x.iter_mut().zip(&d) {
                    *xi += di;
                }
            }
            let be = self.backward_error(&x, b);
            history.push(be);
            if be <= self.tol {
                return Ok(x);
            }
            if self.spd {
                return self.cg(b, Some(x), history);
            }
            return Err(Error::SolverFailure { what: self.what.to_string(), history });
        }
        self.cg(b, None, history)
    }

    fn cg(&self, b: &[f64], x0: Option<Vec<f64>>, mut history: Vec<f64>) -> Result<Vec<f64>> {
        let n = b.len();
        let diag = self.a.diagonal();
        let pre = |r: &[f64]| -> Vec<f64> {
            r.iter().zip(&diag).map(|(ri, d)| if *d > 0.0 { ri / d } else { *ri }).collect()
        };
        let mut x = x0.unwrap_or_else(|| vec![0.0; n]);
        let ax = self.a.mul_vec(&x);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let mut z = pre(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let max_iter = 20 * n + 100;
        for _ in 0..max_iter {
            let ap = self.a.mul_vec(&p);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let be = norm_inf(&r) / (self.a_norm * norm_inf(&x) + norm_inf(b));
            if be <= self.tol {
                return Ok(x);
            }
            z = pre(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        history.push(self.backward_error(&x, b));
        Err(Error::SolverFailure { what: format!("{} (conjugate gradients)", self.what), history })
    }
}
