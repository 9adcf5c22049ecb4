//! The linear fluid-beam system on the fixed rectangle.
//!
//! Time stepping works on primitive unknowns `y = (v, b, eta)`: `v` the fluid
//! velocity on the free faces (interior and outflow), `b = eta_t` the
//! vertical velocity on the beam faces, and `eta`. The semi-discrete system
//! is `M y' = K y + C^T p + r`, `C y = 0`, with
//!
//! * `M = diag(W, dx I, dx (-A))`,
//! * `K` the viscous form on `(v, b)`, `dx A` and `dx gamma lap_s` in the
//!   beam row and `-dx A` in the `eta` row,
//! * `C` the cell-weighted divergence of `(v, b)`.
//!
//! `y^T K y = -nu a(v) - gamma dx |G1 b|^2`, so Crank-Nicolson is a
//! contraction in the `M` norm. The projected operator of the semigroup
//! formulation is exposed through [`CoupledSystem::apply_coupled_operator`]
//! and checked against this system.

use crate::beam::{BeamOperator, BeamParams};
use crate::dense::{self, Mat};
use crate::error::{Error, Result};
use crate::grid::{divergence, BeamField, Grid2D, VectorField};
use crate::leray::dirichlet_normal_max;
use crate::sparse::{dot, norm_inf, LinearSolver, SparseMatrix, Triplets};
use crate::stokes::{top_row, Edges, Slot, StokesOps};

/// `(Pi v, eta, eta_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledState {
    pub pv: VectorField,
    pub eta: BeamField,
    pub eta_t: BeamField,
}

impl CoupledState {
    pub fn zeros(g: Grid2D) -> Self {
        CoupledState { pv: VectorField::zeros(g), eta: BeamField::zeros(g), eta_t: BeamField::zeros(g) }
    }

    pub fn axpy(&mut self, a: f64, x: &CoupledState) {
        self.pv.axpy(a, &x.pv);
        for (p, q) in self.eta.data.iter_mut().zip(&x.eta.data) {
            *p += a * q;
        }
        for (p, q) in self.eta_t.data.iter_mut().zip(&x.eta_t.data) {
            *p += a * q;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut s = CoupledState::zeros(self.pv.grid);
        s.axpy(a, self);
        s
    }

    pub fn sub(&self, o: &CoupledState) -> Self {
        let mut s = self.clone();
        s.axpy(-1.0, o);
        s
    }
}

/// Right-hand side of the projected evolution: `(Pi F, 0, beam load)`.
#[derive(Clone, Debug)]
pub struct EvolutionRHS {
    pub pf: VectorField,
    pub beam_load: BeamField,
}

impl EvolutionRHS {
    pub fn zeros(g: Grid2D) -> Self {
        EvolutionRHS { pf: VectorField::zeros(g), beam_load: BeamField::zeros(g) }
    }
}

/// Assembled linear coupled system on one grid.
#[derive(Debug)]
pub struct CoupledSystem {
    pub grid: Grid2D,
    pub params: BeamParams,
    pub ops: StokesOps,
    pub beam: BeamOperator,
    nf: usize,
    n: usize,
    m_trip: Vec<(usize, usize, f64)>,
    k_trip: Vec<(usize, usize, f64)>,
    m: SparseMatrix,
    k: SparseMatrix,
    c: SparseMatrix,
    added_mass: Mat<f64>,
    one_plus_ma: Mat<f64>,
}

/// Outcome of one step at the state level.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub state: CoupledState,
    /// Relative change made by re-projecting the primitive velocity.
    pub reprojection: f64,
}

impl CoupledSystem {
    pub fn new(grid: Grid2D, params: BeamParams) -> Result<Self> {
        params.validate()?;
        let ops = StokesOps::new(grid, params.nu)?;
        let beam = BeamOperator::new(&grid, params)?;
        let layout = ops.layout().clone();
        let nf = layout.n();
        let n = grid.nx;
        let big = nf + 2 * n;
        let dx = grid.dx;
        let top_face = |k: usize| {
            let j = k / grid.nx;
            (j == grid.nz).then(|| nf + k % grid.nx)
        };
        let map = |s: Slot| match s {
            Slot::U2(k) => layout.u2_dof[k].or_else(|| top_face(k)),
            other => layout.map(other),
        };

        let mut m_trip = Vec::new();
        for (d, w) in layout.weights.iter().enumerate() {
            m_trip.push((d, d, *w));
        }
        for i in 0..n {
            m_trip.push((nf + i, nf + i, dx));
        }
        let a = beam.a_matrix();
        let lap = beam.lap_matrix();
        for i in 0..n {
            for j in 0..n {
                if a[(i, j)] != 0.0 {
                    m_trip.push((nf + n + i, nf + n + j, -dx * a[(i, j)]));
                }
            }
        }

        let mut kt = Triplets::new(big, big);
        ops.form().push_triplets(&map, -params.nu, &mut kt);
        for i in 0..n {
            for j in 0..n {
                kt.push(nf + i, nf + j, dx * params.gamma * lap[(i, j)]);
                kt.push(nf + i, nf + n + j, dx * a[(i, j)]);
                kt.push(nf + n + i, nf + j, -dx * a[(i, j)]);
            }
        }
        let k_trip = kt.entries;

        let mut ct = Triplets::new(grid.n_cells(), big);
        for (c, d, v) in layout.divergence_entries() {
            ct.push(c, d, v);
        }
        for i in 0..n {
            ct.push(grid.cell(i, grid.nz - 1), nf + i, dx);
        }

        let m = SparseMatrix::from_triplets(big, big, &m_trip)?;
        let k = SparseMatrix::from_triplets(big, big, &k_trip)?;
        let c = ct.build()?;

        let mut added_mass = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = ops.added_mass(&e)?;
            for i in 0..n {
                added_mass[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        let one_plus_ma = Mat::from_fn(n, n, |i, j| added_mass[(i, j)] + f64::from(u8::from(i == j)));
        Ok(CoupledSystem { grid, params, ops, beam, nf, n, m_trip, k_trip, m, k, c, added_mass, one_plus_ma })
    }

    /// Length of the primitive vector `(v, b, eta)`.
    pub fn dim(&self) -> usize {
        self.nf + 2 * self.n
    }

    pub fn n_fluid(&self) -> usize {
        self.nf
    }

    pub fn n_beam(&self) -> usize {
        self.n
    }

    pub fn mass(&self) -> &SparseMatrix {
        &self.m
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.k
    }

    pub fn constraint(&self) -> &SparseMatrix {
        &self.c
    }

    pub fn added_mass_matrix(&self) -> &Mat<f64> {
        &self.added_mass
    }

    pub fn energy_inner(&self, y1: &[f64], y2: &[f64]) -> f64 {
        dot(&self.m.mul_vec(y1), y2)
    }

    /// Norm in which the discrete semigroup is a contraction:
    /// `|Pi v|^2 + <(I + M_a) eta_t, eta_t> + |eta|_{H^2_0}^2`.
    pub fn energy_norm(&self, y: &[f64]) -> f64 {
        self.energy_inner(y, y).max(0.0).sqrt()
    }

    /// Fluid velocity with its beam faces filled in.
    pub fn velocity(&self, y: &[f64]) -> VectorField {
        let g = self.grid;
        let mut v = VectorField::zeros(g);
        self.ops.layout().scatter_into(&y[..self.nf], &mut v);
        for i in 0..self.n {
            v.u2[g.zf(i, g.nz)] = y[self.nf + i];
        }
        v
    }

    fn beam_parts<'a>(&self, y: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        (&y[self.nf..self.nf + self.n], &y[self.nf + self.n..])
    }

    pub fn to_state(&self, y: &[f64]) -> Result<CoupledState> {
        let (b, eta) = self.beam_parts(y);
        let pv = self.ops.leray.apply(&self.velocity(y))?;
        Ok(CoupledState {
            pv,
            eta: BeamField { grid: self.grid, data: eta.to_vec() },
            eta_t: BeamField { grid: self.grid, data: b.to_vec() },
        })
    }

    /// Primitive vector of a state: `v = Pi v + grad N_s(eta_t)`.
    pub fn from_state(&self, s: &CoupledState) -> Result<Vec<f64>> {
        let mut v = s.pv.clone();
        v.axpy(1.0, &self.ops.ns_gradient(&s.eta_t.data)?);
        let mut y = self.ops.layout().gather(&v);
        y.extend_from_slice(&s.eta_t.data);
        y.extend_from_slice(&s.eta.data);
        Ok(y)
    }

    /// `(I + M_a) x = b`.
    pub fn added_mass_solve(&self, b: &BeamField) -> Result<BeamField> {
        if b.data.len() != self.n {
            return Err(Error::GridMismatch("beam load length".into()));
        }
        let x = dense::solve(&self.one_plus_ma, &b.data);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverFailure { what: "added-mass solve".into(), history: vec![f64::INFINITY] });
        }
        Ok(BeamField { grid: b.grid, data: x })
    }

    pub fn apply_one_plus_ma(&self, x: &[f64]) -> Vec<f64> {
        dense::mat_vec(&self.one_plus_ma, x)
    }

    /// `<s1, s2>_H` with the added-mass weighting on the beam velocity.
    pub fn h_inner(&self, s1: &CoupledState, s2: &CoupledState) -> Result<f64> {
        let dx = self.grid.dx;
        Ok(s1.pv.inner(&s2.pv)?
            + self.beam.h2_inner(&s1.eta.data, &s2.eta.data)
            + dx * dot(&self.apply_one_plus_ma(&s1.eta_t.data), &s2.eta_t.data))
    }

    pub fn h_norm(&self, s: &CoupledState) -> Result<f64> {
        Ok(self.h_inner(s, s)?.max(0.0).sqrt())
    }

    /// Unweighted product `<pv, pv> + <eta, eta>_{H^2_0} + <eta_t, eta_t>`.
    pub fn plain_h_norm(&self, s: &CoupledState) -> Result<f64> {
        Ok((s.pv.inner(&s.pv)?
            + self.beam.h2_inner(&s.eta.data, &s.eta.data)
            + self.beam.l2_inner(&s.eta_t.data, &s.eta_t.data))
        .max(0.0)
        .sqrt())
    }

    /// Invariant defects of a state: `(max |div pv|, max |pv.n| on Gamma_d)`.
    pub fn state_defects(&self, s: &CoupledState) -> (f64, f64) {
        (norm_inf(&divergence(&s.pv).data), dirichlet_normal_max(&s.pv))
    }

    /// Viscous traction on the beam from the discrete form: `-(nu/dx) dA/db`.
    pub fn viscous_traction(&self, v: &VectorField, e: &Edges) -> Vec<f64> {
        let g = self.grid;
        let k = self.ops.form().gradient(v, e);
        (0..g.nx).map(|i| -self.params.nu / g.dx * k.u2[g.zf(i, g.nz)]).collect()
    }

    /// Projected operator applied to a state.
    pub fn apply_coupled_operator(&self, s: &CoupledState) -> Result<CoupledState> {
        let g = self.grid;
        let zero_e = Edges::zeros(&g);
        let mut v = s.pv.clone();
        v.axpy(1.0, &self.ops.ns_gradient(&s.eta_t.data)?);
        let lap_v = self.ops.viscous_term(&v, &zero_e);
        let row1 = self.ops.leray.apply(&lap_v)?;
        let nv = top_row(&self.ops.leray.np_operator(&lap_v)?);
        let traction = self.viscous_traction(&v, &zero_e);
        let a_eta = self.beam.apply_a(&s.eta.data);
        let lap_b = self.beam.apply_lap(&s.eta_t.data);
        let load: Vec<f64> =
            (0..self.n).map(|i| nv[i] + traction[i] + a_eta[i] + self.params.gamma * lap_b[i]).collect();
        let row3 = self.added_mass_solve(&BeamField { grid: g, data: load })?;
        Ok(CoupledState { pv: row1, eta: s.eta_t.clone(), eta_t: row3 })
    }

    /// `y'` from `M y' = K y + C^T p`, `C y' = 0`.
    pub fn apply_primitive(&self, y: &[f64]) -> Result<Vec<f64>> {
        let big = self.dim();
        let nc = self.grid.n_cells();
        let mut t = self.saddle(&self.m_trip, &[], 0.0);
        t.nrows = big + nc;
        let solver = LinearSolver::new(t.build()?, false, "coupled mass saddle solve")?;
        let mut rhs = self.k.mul_vec(y);
        rhs.resize(big + nc, 0.0);
        let x = solver.solve(&rhs)?;
        Ok(x[..big].to_vec())
    }

    /// `[[M - s K, -C^T], [-C, 0]]`.
    fn saddle(&self, m: &[(usize, usize, f64)], k: &[(usize, usize, f64)], s: f64) -> Triplets {
        let big = self.dim();
        let nc = self.grid.n_cells();
        let mut t = Triplets::new(big + nc, big + nc);
        for &(i, j, v) in m {
            t.push(i, j, v);
        }
        for &(i, j, v) in k {
            t.push(i, j, -s * v);
        }
        let (cp, ri, val) = csc(&self.c);
        for col in 0..big {
            for idx in cp[col]..cp[col + 1] {
                t.push(col, big + ri[idx], -val[idx]);
                t.push(big + ri[idx], col, -val[idx]);
            }
        }
        t
    }

    /// Factorized theta-scheme step for a fixed `dt`.
    pub fn stepper(&self, dt: f64, theta: f64) -> Result<Stepper> {
        if !(dt > 0.0) || !(0.5..=1.0).contains(&theta) {
            return Err(Error::InvalidConfig(vec![format!("time step needs dt > 0 and theta in [1/2, 1], got {dt}, {theta}")]));
        }
        let lhs = self.saddle(&self.m_trip, &self.k_trip, theta * dt).build()?;
        let solver = LinearSolver::new(lhs, false, "coupled time step")?;
        let mut pt = Triplets::new(self.dim(), self.dim());
        for &(i, j, v) in &self.m_trip {
            pt.push(i, j, v);
        }
        for &(i, j, v) in &self.k_trip {
            pt.push(i, j, (1.0 - theta) * dt * v);
        }
        Ok(Stepper { dt, theta, n: self.dim(), solver, explicit: pt.build()? })
    }

    /// Primitive forcing `(W F, dx H, 0)` for fluid forcing `F` (dof faces)
    /// and beam load `H`.
    pub fn primitive_forcing(&self, f: &VectorField, h: &[f64]) -> Vec<f64> {
        let layout = self.ops.layout();
        let mut r: Vec<f64> = layout.gather(f).iter().zip(&layout.weights).map(|(a, w)| a * w).collect();
        r.extend(h.iter().map(|v| self.grid.dx * v));
        r.resize(self.dim(), 0.0);
        r
    }

    /// Primitive forcing equivalent to a projected right-hand side.
    pub fn rhs_to_primitive(&self, rhs: &EvolutionRHS) -> Vec<f64> {
        let h = self.apply_one_plus_ma(&rhs.beam_load.data);
        self.primitive_forcing(&rhs.pf, &h)
    }

    /// Projected right-hand side of a primitive forcing `(F, H)`:
    /// `(Pi F, (I + M_a)^-1 (N_p(F) + H))`.
    pub fn evolution_rhs(&self, f: &VectorField, h: &[f64]) -> Result<EvolutionRHS> {
        let pf = self.ops.leray.apply(f)?;
        let np = top_row(&self.ops.leray.np_operator(f)?);
        let load: Vec<f64> = np.iter().zip(h).map(|(a, b)| a + b).collect();
        Ok(EvolutionRHS { pf, beam_load: self.added_mass_solve(&BeamField { grid: self.grid, data: load })? })
    }

    /// One step at the state level, re-projecting the new velocity.
    pub fn step_semigroup(
        &self,
        stepper: &Stepper,
        s: &CoupledState,
        rhs0: &EvolutionRHS,
        rhs1: &EvolutionRHS,
    ) -> Result<StepReport> {
        let y0 = self.from_state(s)?;
        let (y1, _) = stepper.step(&y0, &self.rhs_to_primitive(rhs0), &self.rhs_to_primitive(rhs1))?;
        let state = self.to_state(&y1)?;
        let back = self.from_state(&state)?;
        let diff: Vec<f64> = back.iter().zip(&y1).map(|(a, b)| a - b).collect();
        let scale = self.energy_norm(&y1);
        let reprojection = if scale == 0.0 { 0.0 } else { self.energy_norm(&diff) / scale };
        Ok(StepReport { state, reprojection })
    }
}

fn csc(m: &SparseMatrix) -> (&[usize], &[usize], &[f64]) {
    let s = m.mat.symbolic();
    (s.col_ptr(), s.row_idx(), m.mat.val())
}

/// Factorized theta-scheme: `(M - theta dt K) y1 - dt C^T p = (M + (1 - theta) dt K) y0
/// + dt (theta r1 + (1 - theta) r0)`, `C y1 = 0`.
#[derive(Debug)]
pub struct Stepper {
    pub dt: f64,
    pub theta: f64,
    n: usize,
    solver: LinearSolver,
    explicit: SparseMatrix,
}

impl Stepper {
    /// Returns the new primitive state and the step pressure.
    pub fn step(&self, y0: &[f64], r0: &[f64], r1: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut rhs = self.explicit.mul_vec(y0);
        let (a, b) = (self.dt * (1.0 - self.theta), self.dt * self.theta);
        for i in 0..self.n {
            rhs[i] += a * r0[i] + b * r1[i];
        }
        rhs.resize(self.solver.dim(), 0.0);
        let x = self.solver.solve(&rhs)?;
        let p = x[self.n..].iter().map(|v| v / self.dt).collect();
        Ok((x[..self.n].to_vec(), p))
    }

    /// Unforced step.
    pub fn step_free(&self, y0: &[f64]) -> Result<Vec<f64>> {
        let zero = vec![0.0; self.n];
        Ok(self.step(y0, &zero, &zero)?.0)
    }
}
