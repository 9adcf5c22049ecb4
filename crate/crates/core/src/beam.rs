//! Clamped damped Euler-Bernoulli beam on the nodes under the fluid cells.
//!
//! With `G1` the first difference onto the `n + 1` midpoints and `G2` the
//! second difference at the nodes (both using the clamped ghost values),
//! `A = -(alpha G2^T G2 + beta G1^T G1)` and `lap_s = -G1^T G1`. Both are
//! symmetric by construction and `A` is negative definite.

use crate::dense::{self, Mat};
use crate::error::{Error, Result};
use crate::grid::{BeamField, Grid2D};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BeamParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub nu: f64,
}

impl BeamParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, nu: f64) -> Result<Self> {
        let p = BeamParams { alpha, beta, gamma, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.alpha > 0.0) {
            bad.push(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.beta >= 0.0) {
            bad.push(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.gamma > 0.0) {
            bad.push(format!("gamma must be > 0, got {}", self.gamma));
        }
        if !(self.nu > 0.0) {
            bad.push(format!("nu must be > 0, got {}", self.nu));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad))
        }
    }
}

/// First differences at the midpoints `x = k h`, `k = 0..=n`.
pub fn d1_matrix(n: usize, h: f64) -> Mat<f64> {
    let mut m = Mat::zeros(n + 1, n);
    for k in 1..n {
        m[(k, k)] = 1.0 / h;
        m[(k, k - 1)] = -1.0 / h;
    }
    // eta_0 - ghost with ghost = 2 eta_0 - eta_1 / 9
    m[(0, 0)] = -1.0 / h;
    m[(0, 1)] = 1.0 / (9.0 * h);
    m[(n, n - 1)] = 1.0 / h;
    m[(n, n - 2)] = -1.0 / (9.0 * h);
    m
}

/// Second differences at the nodes with clamped ghosts.
pub fn d2_matrix(n: usize, h: f64) -> Mat<f64> {
    let h2 = h * h;
    let mut m = Mat::zeros(n, n);
    for k in 0..n {
        m[(k, k)] = -2.0 / h2;
        if k > 0 {
            m[(k, k - 1)] = 1.0 / h2;
        }
        if k + 1 < n {
            m[(k, k + 1)] = 1.0 / h2;
        }
    }
    m[(0, 0)] += 2.0 / h2;
    m[(0, 1)] -= 1.0 / (9.0 * h2);
    m[(n - 1, n - 1)] += 2.0 / h2;
    m[(n - 1, n - 2)] -= 1.0 / (9.0 * h2);
    m
}

#[derive(Clone, Debug)]
pub struct BeamOperator {
    pub n: usize,
    pub h: f64,
    pub params: BeamParams,
    a: Mat<f64>,
    lap: Mat<f64>,
}

impl BeamOperator {
    pub fn new(grid: &Grid2D, params: BeamParams) -> Result<Self> {
        params.validate()?;
        Ok(Self::with_nodes(grid.nx, grid.dx, params))
    }

    pub fn with_nodes(n: usize, h: f64, params: BeamParams) -> Self {
        let g1 = d1_matrix(n, h);
        let g2 = d2_matrix(n, h);
        let ata = g1.transpose() * &g1;
        let btb = g2.transpose() * &g2;
        let a = Mat::from_fn(n, n, |i, j| -(params.alpha * btb[(i, j)] + params.beta * ata[(i, j)]));
        let lap = Mat::from_fn(n, n, |i, j| -ata[(i, j)]);
        BeamOperator { n, h, params, a, lap }
    }

    pub fn a_matrix(&self) -> &Mat<f64> {
        &self.a
    }

    pub fn lap_matrix(&self) -> &Mat<f64> {
        &self.lap
    }

    pub fn apply_a(&self, eta: &[f64]) -> Vec<f64> {
        dense::mat_vec(&self.a, eta)
    }

    pub fn apply_lap(&self, eta: &[f64]) -> Vec<f64> {
        dense::mat_vec(&self.lap, eta)
    }

    pub fn apply_a_alpha_beta(&self, eta: &BeamField) -> Result<BeamField> {
        self.check(eta)?;
        Ok(BeamField { grid: eta.grid, data: self.apply_a(&eta.data) })
    }

    fn check(&self, b: &BeamField) -> Result<()> {
        if b.data.len() != self.n {
            return Err(Error::GridMismatch(format!("beam field has {} nodes, operator {}", b.data.len(), self.n)));
        }
        Ok(())
    }

    /// `L2(Gamma_s)` pairing with node weights `h`.
    pub fn l2_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.h * crate::sparse::dot(a, b)
    }

    /// `H^2_0` pairing `<(-A)^(1/2) a, (-A)^(1/2) b>`.
    pub fn h2_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let na = self.apply_a(a);
        -self.h * crate::sparse::dot(&na, b)
    }

    pub fn h2_norm(&self, a: &[f64]) -> f64 {
        self.h2_inner(a, a).max(0.0).sqrt()
    }

    /// `int |eta_tx|^2`, the damping dissipation rate per unit `gamma`.
    pub fn gradient_energy(&self, a: &[f64]) -> f64 {
        -self.h * crate::sparse::dot(&self.apply_lap(a), a)
    }

    /// Block generator `[[0, I], [A, gamma lap_s]]` acting on `(eta, eta_t)`.
    pub fn block_matrix(&self) -> Mat<f64> {
        let n = self.n;
        let g = self.params.gamma;
        Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
            (true, true) => 0.0,
            (true, false) => f64::from(u8::from(j - n == i)),
            (false, true) => self.a[(i - n, j)],
            (false, false) => g * self.lap[(i - n, j - n)],
        })
    }

    pub fn apply_block(&self, eta: &[f64], eta_t: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut acc = self.apply_a(eta);
        for (a, l) in acc.iter_mut().zip(self.apply_lap(eta_t)) {
            *a += self.params.gamma * l;
        }
        (eta_t.to_vec(), acc)
    }

    /// Largest real part of the block spectrum.
    pub fn spectral_abscissa(&self) -> Result<f64> {
        Ok(dense::eigenvalues(&self.block_matrix())?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
    }

    /// `1/2 |eta_t|^2 + 1/2 <-A eta, eta>`.
    pub fn energy(&self, eta: &[f64], eta_t: &[f64]) -> f64 {
        0.5 * self.l2_inner(eta_t, eta_t) + 0.5 * self.h2_inner(eta, eta)
    }

    /// Crank-Nicolson propagator for the unforced beam over `dt`.
    pub fn crank_nicolson(&self, dt: f64) -> Mat<f64> {
        let b = self.block_matrix();
        let m = 2 * self.n;
        let lhs = Mat::from_fn(m, m, |i, j| f64::from(u8::from(i == j)) - 0.5 * dt * b[(i, j)]);
        let rhs = Mat::from_fn(m, m, |i, j| f64::from(u8::from(i == j)) + 0.5 * dt * b[(i, j)]);
        use faer::linalg::solvers::Solve;
        lhs.partial_piv_lu().solve(&rhs)
    }
}
