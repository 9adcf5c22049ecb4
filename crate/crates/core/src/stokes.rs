//! Steady Stokes solves with mixed boundary conditions, the liftings of the
//! beam trace, the inflow and the outflow pressure, and the pressure
//! operators `N_s`, `N_v`.
//!
//! The viscous term is the gradient of an explicit discrete Dirichlet form
//! `a(u, u) = sum w_s (difference)^2`; near a wall the difference is taken
//! against the boundary value at half spacing. This reproduces the usual
//! ghost-cell Laplacian, gives `u1_x = 0` on the outflow as natural condition
//! and keeps every assembled operator symmetric.

use crate::elliptic::EllipticSolver;
use crate::error::{Error, Result};
use crate::grid::{
    divergence, gradient_bc, BcKinds, BeamField, Boundary, Grid2D, ScalarBc, ScalarField, Stagger, VectorField,
};
use crate::leray::LerayProjector;
use crate::sparse::{LinearSolver, Triplets};
use std::f64::consts::PI;

// ------------------------------------------------------------ Dirichlet form

/// A value entering the Dirichlet form: a face value or a wall value that
/// does not sit on a face.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    U1(usize),
    U2(usize),
    /// `u2` on `x = 0` at z-face height `j`.
    LeftU2(usize),
    /// `u2` on `x = L` at z-face height `j`.
    RightU2(usize),
    /// `u1` on `z = 0` at x-face abscissa `i`.
    BottomU1(usize),
    /// `u1` on `z = 1` at x-face abscissa `i`.
    TopU1(usize),
}

/// Wall values that do not live on faces. Zero unless a problem prescribes
/// tangential data.
#[derive(Clone, Debug, PartialEq)]
pub struct Edges {
    pub left_u2: Vec<f64>,
    pub right_u2: Vec<f64>,
    pub bottom_u1: Vec<f64>,
    pub top_u1: Vec<f64>,
}

impl Edges {
    pub fn zeros(g: &Grid2D) -> Self {
        Edges {
            left_u2: vec![0.0; g.nz + 1],
            right_u2: vec![0.0; g.nz + 1],
            bottom_u1: vec![0.0; g.nx + 1],
            top_u1: vec![0.0; g.nx + 1],
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Sample {
    w: f64,
    a: (Slot, f64),
    b: (Slot, f64),
}

#[derive(Clone, Debug)]
pub struct ViscousForm {
    pub grid: Grid2D,
    samples: Vec<Sample>,
}

impl ViscousForm {
    pub fn new(g: Grid2D) -> Self {
        let (dx, dz) = (g.dx, g.dz);
        let vol = dx * dz;
        let mut s = Vec::new();
        let end_x = |i: usize| if i == 0 || i == g.nx { 0.5 } else { 1.0 };
        let end_z = |j: usize| if j == 0 || j == g.nz { 0.5 } else { 1.0 };
        for j in 0..g.nz {
            for i in 0..g.nx {
                s.push(Sample { w: vol, a: (Slot::U1(g.xf(i + 1, j)), 1.0 / dx), b: (Slot::U1(g.xf(i, j)), -1.0 / dx) });
                s.push(Sample { w: vol, a: (Slot::U2(g.zf(i, j + 1)), 1.0 / dz), b: (Slot::U2(g.zf(i, j)), -1.0 / dz) });
            }
        }
        for i in 0..=g.nx {
            let w = vol * end_x(i);
            for j in 1..g.nz {
                s.push(Sample { w, a: (Slot::U1(g.xf(i, j)), 1.0 / dz), b: (Slot::U1(g.xf(i, j - 1)), -1.0 / dz) });
            }
            s.push(Sample { w: 0.5 * w, a: (Slot::U1(g.xf(i, 0)), 2.0 / dz), b: (Slot::BottomU1(i), -2.0 / dz) });
            s.push(Sample { w: 0.5 * w, a: (Slot::TopU1(i), 2.0 / dz), b: (Slot::U1(g.xf(i, g.nz - 1)), -2.0 / dz) });
        }
        for j in 0..=g.nz {
            let w = vol * end_z(j);
            for i in 1..g.nx {
                s.push(Sample { w, a: (Slot::U2(g.zf(i, j)), 1.0 / dx), b: (Slot::U2(g.zf(i - 1, j)), -1.0 / dx) });
            }
            s.push(Sample { w: 0.5 * w, a: (Slot::U2(g.zf(0, j)), 2.0 / dx), b: (Slot::LeftU2(j), -2.0 / dx) });
            s.push(Sample { w: 0.5 * w, a: (Slot::RightU2(j), 2.0 / dx), b: (Slot::U2(g.zf(g.nx - 1, j)), -2.0 / dx) });
        }
        ViscousForm { grid: g, samples: s }
    }

    fn value(u: &VectorField, e: &Edges, s: Slot) -> f64 {
        match s {
            Slot::U1(k) => u.u1[k],
            Slot::U2(k) => u.u2[k],
            Slot::LeftU2(j) => e.left_u2[j],
            Slot::RightU2(j) => e.right_u2[j],
            Slot::BottomU1(i) => e.bottom_u1[i],
            Slot::TopU1(i) => e.top_u1[i],
        }
    }

    /// `a(u, u)`, the discrete integral of `|grad u|^2`.
    pub fn energy(&self, u: &VectorField, e: &Edges) -> f64 {
        self.samples
            .iter()
            .map(|s| {
                let d = s.a.1 * Self::value(u, e, s.a.0) + s.b.1 * Self::value(u, e, s.b.0);
                s.w * d * d
            })
            .sum()
    }

    /// Bilinear form `a(u, v)` (both with their own wall values).
    pub fn pairing(&self, u: &VectorField, eu: &Edges, v: &VectorField, ev: &Edges) -> f64 {
        self.samples
            .iter()
            .map(|s| {
                let du = s.a.1 * Self::value(u, eu, s.a.0) + s.b.1 * Self::value(u, eu, s.b.0);
                let dv = s.a.1 * Self::value(v, ev, s.a.0) + s.b.1 * Self::value(v, ev, s.b.0);
                s.w * du * dv
            })
            .sum()
    }

    /// Gradient of `a(u, u) / 2` with respect to every face value.
    pub fn gradient(&self, u: &VectorField, e: &Edges) -> VectorField {
        let mut out = VectorField::zeros(self.grid);
        for s in &self.samples {
            let d = s.a.1 * Self::value(u, e, s.a.0) + s.b.1 * Self::value(u, e, s.b.0);
            for (slot, c) in [s.a, s.b] {
                match slot {
                    Slot::U1(k) => out.u1[k] += s.w * d * c,
                    Slot::U2(k) => out.u2[k] += s.w * d * c,
                    _ => {}
                }
            }
        }
        out
    }

    /// Push `scale * K` restricted to slots that `map` numbers.
    pub fn push_triplets(&self, map: &dyn Fn(Slot) -> Option<usize>, scale: f64, t: &mut Triplets) {
        for s in &self.samples {
            let terms = [s.a, s.b];
            for (sa, ca) in terms {
                let Some(ra) = map(sa) else { continue };
                for (sb, cb) in terms {
                    if let Some(rb) = map(sb) {
                        t.push(ra, rb, scale * s.w * ca * cb);
                    }
                }
            }
        }
    }
}

// ------------------------------------------------------------- DOF layout

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RightBoundary {
    /// `u2 = 0`, `p = 0`, `u1` free.
    Outflow,
    /// Dirichlet velocity; pressure fixed by a zero-mean multiplier.
    Wall,
}

/// Numbering of the velocity unknowns of a Stokes problem.
#[derive(Clone, Debug)]
pub struct VelocityLayout {
    pub grid: Grid2D,
    pub right: RightBoundary,
    pub u1_dof: Vec<Option<usize>>,
    pub u2_dof: Vec<Option<usize>>,
    /// Face of each dof: `(component, face index)`.
    pub faces: Vec<(u8, usize)>,
    /// L2 weight of each dof.
    pub weights: Vec<f64>,
}

impl VelocityLayout {
    pub fn new(g: Grid2D, right: RightBoundary) -> Self {
        let mut u1_dof = vec![None; g.n_xfaces()];
        let mut u2_dof = vec![None; g.n_zfaces()];
        let mut faces = Vec::new();
        let mut weights = Vec::new();
        let vol = g.dx * g.dz;
        let last = match right {
            RightBoundary::Outflow => g.nx,
            RightBoundary::Wall => g.nx - 1,
        };
        for j in 0..g.nz {
            for i in 1..=last {
                u1_dof[g.xf(i, j)] = Some(faces.len());
                faces.push((1, g.xf(i, j)));
                weights.push(if i == g.nx { 0.5 * vol } else { vol });
            }
        }
        for j in 1..g.nz {
            for i in 0..g.nx {
                u2_dof[g.zf(i, j)] = Some(faces.len());
                faces.push((2, g.zf(i, j)));
                weights.push(vol);
            }
        }
        VelocityLayout { grid: g, right, u1_dof, u2_dof, faces, weights }
    }

    pub fn n(&self) -> usize {
        self.faces.len()
    }

    pub fn map(&self, s: Slot) -> Option<usize> {
        match s {
            Slot::U1(k) => self.u1_dof[k],
            Slot::U2(k) => self.u2_dof[k],
            _ => None,
        }
    }

    pub fn gather(&self, v: &VectorField) -> Vec<f64> {
        self.faces.iter().map(|&(c, k)| if c == 1 { v.u1[k] } else { v.u2[k] }).collect()
    }

    /// Write dof values into `v` (other faces untouched).
    pub fn scatter_into(&self, x: &[f64], v: &mut VectorField) {
        for (&(c, k), &val) in self.faces.iter().zip(x) {
            if c == 1 {
                v.u1[k] = val;
            } else {
                v.u2[k] = val;
            }
        }
    }

    /// Inner product over dof faces with their weights.
    pub fn inner(&self, a: &VectorField, b: &VectorField) -> f64 {
        self.faces
            .iter()
            .zip(&self.weights)
            .map(|(&(c, k), w)| if c == 1 { w * a.u1[k] * b.u1[k] } else { w * a.u2[k] * b.u2[k] })
            .sum()
    }

    /// Cell-weighted divergence rows `B = Wc D` as `(cell, dof, coefficient)`.
    pub fn divergence_entries(&self) -> Vec<(usize, usize, f64)> {
        let g = &self.grid;
        let mut out = Vec::new();
        for j in 0..g.nz {
            for i in 0..g.nx {
                let c = g.cell(i, j);
                let terms = [
                    (self.u1_dof[g.xf(i + 1, j)], g.dz),
                    (self.u1_dof[g.xf(i, j)], -g.dz),
                    (self.u2_dof[g.zf(i, j + 1)], g.dx),
                    (self.u2_dof[g.zf(i, j)], -g.dx),
                ];
                for (d, v) in terms {
                    if let Some(d) = d {
                        out.push((c, d, v));
                    }
                }
            }
        }
        out
    }
}

// --------------------------------------------------------------- solver

/// Inflow velocity profile: `u1` at the inflow faces, `u2` at the wall
/// points `z = j dz`, `j = 0..=nz`.
#[derive(Clone, Debug, PartialEq)]
pub struct InflowProfile {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl InflowProfile {
    pub fn zeros(g: &Grid2D) -> Self {
        InflowProfile { u1: vec![0.0; g.nz], u2: vec![0.0; g.nz + 1] }
    }

    pub fn from_fn(g: &Grid2D, f1: impl Fn(f64) -> f64, f2: impl Fn(f64) -> f64) -> Self {
        InflowProfile {
            u1: (0..g.nz).map(|j| f1(g.zc(j))).collect(),
            u2: (0..=g.nz).map(|j| f2(j as f64 * g.dz)).collect(),
        }
    }

    /// Integral of `omega . n` over the inflow (`n = -e1`).
    pub fn flux(&self, g: &Grid2D) -> f64 {
        -self.u1.iter().sum::<f64>() * g.dz
    }

    pub fn is_zero(&self) -> bool {
        self.u1.iter().chain(&self.u2).all(|v| *v == 0.0)
    }

    pub fn scaled(&self, a: f64) -> Self {
        InflowProfile { u1: self.u1.iter().map(|v| a * v).collect(), u2: self.u2.iter().map(|v| a * v).collect() }
    }
}

/// Boundary velocity data of a Stokes problem.
#[derive(Clone, Debug)]
pub struct VelocityData {
    pub inflow: InflowProfile,
    /// Vertical velocity on the top (beam) faces.
    pub top: Vec<f64>,
    /// `u1` on the right faces (wall problems only).
    pub right_u1: Vec<f64>,
    /// `u2` on the right wall points (wall problems only).
    pub right_u2: Vec<f64>,
}

impl VelocityData {
    pub fn zeros(g: &Grid2D) -> Self {
        VelocityData {
            inflow: InflowProfile::zeros(g),
            top: vec![0.0; g.nx],
            right_u1: vec![0.0; g.nz],
            right_u2: vec![0.0; g.nz + 1],
        }
    }

    pub fn with_top(g: &Grid2D, top: &[f64]) -> Self {
        let mut d = Self::zeros(g);
        d.top = top.to_vec();
        d
    }

    pub fn with_inflow(g: &Grid2D, inflow: &InflowProfile) -> Self {
        let mut d = Self::zeros(g);
        d.inflow = inflow.clone();
        d
    }

    /// Face field carrying only the boundary data, and the wall values.
    pub fn boundary_field(&self, g: &Grid2D, right: RightBoundary) -> (VectorField, Edges) {
        let mut v = VectorField::zeros(*g);
        for j in 0..g.nz {
            v.u1[g.xf(0, j)] = self.inflow.u1[j];
            if right == RightBoundary::Wall {
                v.u1[g.xf(g.nx, j)] = self.right_u1[j];
            }
        }
        for i in 0..g.nx {
            v.u2[g.zf(i, g.nz)] = self.top[i];
        }
        let mut e = Edges::zeros(g);
        e.left_u2 = self.inflow.u2.clone();
        if right == RightBoundary::Wall {
            e.right_u2 = self.right_u2.clone();
        }
        (v, e)
    }
}

#[derive(Clone, Debug)]
pub struct StokesSolution {
    pub u: VectorField,
    pub p: ScalarField,
    pub edges: Edges,
    /// Weighted momentum residual relative to the load.
    pub residual_momentum: f64,
    /// `max |div u|`.
    pub residual_divergence: f64,
    /// Lagrange multiplier of the mean-pressure constraint (wall problems).
    pub multiplier: f64,
}

/// Monolithic saddle-point solver for `lambda u - nu lap u + grad p = f`,
/// `div u = 0` with Dirichlet data on inflow, bottom and top and either the
/// outflow conditions or a wall on the right.
#[derive(Debug)]
pub struct StokesSolver {
    pub grid: Grid2D,
    pub lambda: f64,
    pub nu: f64,
    pub layout: VelocityLayout,
    pub form: ViscousForm,
    solver: LinearSolver,
}

impl StokesSolver {
    pub fn new(grid: Grid2D, right: RightBoundary, lambda: f64, nu: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !(nu > 0.0) {
            return Err(Error::InvalidConfig(vec![format!("Stokes solver needs lambda >= 0 and nu > 0, got {lambda}, {nu}")]));
        }
        let layout = VelocityLayout::new(grid, right);
        let form = ViscousForm::new(grid);
        let nu_dofs = layout.n();
        let np = grid.n_cells();
        let gauge = right == RightBoundary::Wall;
        let n = nu_dofs + np + usize::from(gauge);
        let mut t = Triplets::new(n, n);
        for (d, w) in layout.weights.iter().enumerate() {
            t.push(d, d, lambda * w);
        }
        form.push_triplets(&|s| layout.map(s), nu, &mut t);
        for (c, d, v) in layout.divergence_entries() {
            t.push(d, nu_dofs + c, -v);
            t.push(nu_dofs + c, d, -v);
        }
        if gauge {
            let vol = grid.dx * grid.dz;
            for c in 0..np {
                t.push(nu_dofs + c, n - 1, vol);
                t.push(n - 1, nu_dofs + c, vol);
            }
        }
        let solver = LinearSolver::new(t.build()?, false, "Stokes saddle-point solve")?;
        Ok(StokesSolver { grid, lambda, nu, layout, form, solver })
    }

    pub fn right(&self) -> RightBoundary {
        self.layout.right
    }

    /// `-nu * grad(a/2)` at the dof faces divided by the face weights: the
    /// discrete `nu lap u` for a field carrying its boundary data.
    pub fn viscous_term(&self, u: &VectorField, e: &Edges) -> VectorField {
        let k = self.form.gradient(u, e);
        let mut out = VectorField::zeros(self.grid);
        for (&(c, f), w) in self.layout.faces.iter().zip(&self.layout.weights) {
            if c == 1 {
                out.u1[f] = -self.nu * k.u1[f] / w;
            } else {
                out.u2[f] = -self.nu * k.u2[f] / w;
            }
        }
        out
    }

    pub fn solve(&self, f: &VectorField, data: &VelocityData) -> Result<StokesSolution> {
        let g = self.grid;
        let right = self.right();
        let (ub, edges) = data.boundary_field(&g, right);
        let nu_dofs = self.layout.n();
        let np = g.n_cells();
        let mut rhs = vec![0.0; self.solver.dim()];
        let kb = self.form.gradient(&ub, &edges);
        for (d, (&(c, k), w)) in self.layout.faces.iter().zip(&self.layout.weights).enumerate() {
            let (fv, kv) = if c == 1 { (f.u1[k], kb.u1[k]) } else { (f.u2[k], kb.u2[k]) };
            rhs[d] = w * fv - self.nu * kv;
        }
        let div_b = divergence(&ub);
        let vol = g.dx * g.dz;
        for c in 0..np {
            rhs[nu_dofs + c] = vol * div_b.data[c];
        }
        let x = self.solver.solve(&rhs)?;
        let mut u = ub;
        self.layout.scatter_into(&x[..nu_dofs], &mut u);
        let p = ScalarField { grid: g, stagger: Stagger::Cell, data: x[nu_dofs..nu_dofs + np].to_vec() };
        let multiplier = if right == RightBoundary::Wall { x[nu_dofs + np] } else { 0.0 };
        let residual_divergence = crate::sparse::norm_inf(&divergence(&u).data);
        let residual_momentum = self.momentum_residual(&u, &edges, &p, f);
        Ok(StokesSolution { u, p, edges, residual_momentum, residual_divergence, multiplier })
    }

    fn momentum_residual(&self, u: &VectorField, e: &Edges, p: &ScalarField, f: &VectorField) -> f64 {
        let lap = self.viscous_term(u, e);
        let kinds = match self.right() {
            RightBoundary::Outflow => BcKinds::MIXED,
            RightBoundary::Wall => BcKinds { outflow: crate::grid::SideKind::Neumann, ..BcKinds::MIXED },
        };
        let gp = gradient_bc(p, &ScalarBc::homogeneous(&self.grid, kinds)).unwrap_or_else(|_| VectorField::zeros(self.grid));
        let mut num = 0.0;
        let mut den = 0.0;
        for (&(c, k), w) in self.layout.faces.iter().zip(&self.layout.weights) {
            let (uu, ll, gg, ff) = if c == 1 {
                (u.u1[k], lap.u1[k], gp.u1[k], f.u1[k])
            } else {
                (u.u2[k], lap.u2[k], gp.u2[k], f.u2[k])
            };
            let r = self.lambda * uu - ll + gg - ff;
            num += w * r * r;
            den += w * (ff * ff + (self.lambda * uu).powi(2) + ll * ll);
        }
        if den == 0.0 {
            0.0
        } else {
            (num / den).sqrt()
        }
    }
}

// ------------------------------------------------------- lifting results

#[derive(Clone, Debug)]
pub struct Lifting {
    pub u: VectorField,
    pub p: ScalarField,
    pub edges: Edges,
    /// Largest `|u2|` on the outflow line (midpoint of the last column and
    /// its mirror image).
    pub outflow_u2_max: f64,
    /// `|flux(omega on inflow) + flux(corrector on top)|` for the inflow lift.
    pub flux_compensation: f64,
}

/// Bump used to carry the inflow flux out through the beam boundary.
pub fn bump(x: f64, len: f64) -> f64 {
    (x * (len - x)).powi(4)
}

/// Stokes machinery on one grid: the mixed solver, the wall solvers used by
/// the liftings, the Leray projector and the scalar pressure problems.
#[derive(Debug)]
pub struct StokesOps {
    pub grid: Grid2D,
    pub nu: f64,
    pub leray: LerayProjector,
    pub mixed: StokesSolver,
    wall: StokesSolver,
    doubled: StokesSolver,
    outflow_lift: EllipticSolver,
}

impl StokesOps {
    pub fn new(grid: Grid2D, nu: f64) -> Result<Self> {
        let doubled_grid = Grid2D::new(2 * grid.nx, grid.nz, 2.0 * grid.length)?;
        Ok(StokesOps {
            grid,
            nu,
            leray: LerayProjector::new(grid)?,
            mixed: StokesSolver::new(grid, RightBoundary::Outflow, 0.0, nu)?,
            wall: StokesSolver::new(grid, RightBoundary::Wall, 0.0, nu)?,
            doubled: StokesSolver::new(doubled_grid, RightBoundary::Wall, 0.0, nu)?,
            outflow_lift: EllipticSolver::new(
                grid,
                BcKinds { outflow: crate::grid::SideKind::Dirichlet, ..BcKinds::MIXED },
            )?,
        })
    }

    pub fn layout(&self) -> &VelocityLayout {
        &self.mixed.layout
    }

    pub fn form(&self) -> &ViscousForm {
        &self.mixed.form
    }

    /// Mixed problem with a given `lambda` (a fresh factorization).
    pub fn solve_stokes_mixed(
        &self,
        lambda: f64,
        f: &VectorField,
        g: &BeamField,
        omega: &InflowProfile,
    ) -> Result<StokesSolution> {
        let mut data = VelocityData::with_top(&self.grid, &g.data);
        data.inflow = omega.clone();
        if lambda == 0.0 {
            self.mixed.solve(f, &data)
        } else {
            StokesSolver::new(self.grid, RightBoundary::Outflow, lambda, self.nu)?.solve(f, &data)
        }
    }

    /// `L(g)`: steady mixed Stokes with vertical datum `g` on the beam.
    pub fn lift_beam(&self, g: &[f64]) -> Result<StokesSolution> {
        self.mixed.solve(&VectorField::zeros(self.grid), &VelocityData::with_top(&self.grid, g))
    }

    /// `L_{Gamma_i}(omega)`: steady mixed Stokes with inflow datum `omega`.
    pub fn lift_inflow(&self, omega: &InflowProfile) -> Result<StokesSolution> {
        self.mixed.solve(&VectorField::zeros(self.grid), &VelocityData::with_inflow(&self.grid, omega))
    }

    /// Beam-trace lifting by odd reflection onto `(0, 2L)` and a Dirichlet
    /// Stokes solve there, symmetrized and restricted back.
    pub fn lift_gamma_s(&self, g: &BeamField) -> Result<Lifting> {
        let gr = self.grid;
        let dg = self.doubled.grid;
        let n = gr.nx;
        let mut top = vec![0.0; dg.nx];
        for i in 0..n {
            top[i] = g.data[i];
            top[2 * n - 1 - i] = -g.data[i];
        }
        let sol = self.doubled.solve(&VectorField::zeros(dg), &VelocityData::with_top(&dg, &top))?;
        let v = &sol.u;
        // average with diag(1, -1) v(2L - x, z)
        let mut avg = VectorField::zeros(dg);
        for j in 0..dg.nz {
            for i in 0..=dg.nx {
                avg.u1[dg.xf(i, j)] = 0.5 * (v.u1[dg.xf(i, j)] + v.u1[dg.xf(dg.nx - i, j)]);
            }
        }
        for j in 0..=dg.nz {
            for i in 0..dg.nx {
                avg.u2[dg.zf(i, j)] = 0.5 * (v.u2[dg.zf(i, j)] - v.u2[dg.zf(dg.nx - 1 - i, j)]);
            }
        }
        let mut u = VectorField::zeros(gr);
        for j in 0..gr.nz {
            for i in 0..=n {
                u.u1[gr.xf(i, j)] = avg.u1[dg.xf(i, j)];
            }
        }
        let mut outflow_u2_max = 0.0f64;
        for j in 0..=gr.nz {
            for i in 0..n {
                u.u2[gr.zf(i, j)] = avg.u2[dg.zf(i, j)];
            }
            let mid = 0.5 * (avg.u2[dg.zf(n - 1, j)] + avg.u2[dg.zf(n, j)]);
            outflow_u2_max = outflow_u2_max.max(mid.abs());
        }
        let mut p = ScalarField::zeros(gr, Stagger::Cell);
        for j in 0..gr.nz {
            for i in 0..n {
                p.data[gr.cell(i, j)] = 0.5 * (sol.p.data[dg.cell(i, j)] + sol.p.data[dg.cell(dg.nx - 1 - i, j)]);
            }
        }
        let shift = (0..gr.nz).map(|j| p.data[gr.cell(n - 1, j)]).sum::<f64>() / gr.nz as f64;
        p.data.iter_mut().for_each(|v| *v -= shift);
        let mut edges = Edges::zeros(&gr);
        for j in 0..=gr.nz {
            // odd mirror: the wall value on x = L is the midpoint above
            edges.right_u2[j] = 0.5 * (avg.u2[dg.zf(n - 1, j)] + avg.u2[dg.zf(n, j)]);
        }
        Ok(Lifting { u, p, edges, outflow_u2_max, flux_compensation: 0.0 })
    }

    /// Inflow lifting: a corrector on the beam removes the net inflow flux,
    /// a Dirichlet solve lifts both data, and the beam-trace lifting of the
    /// corrector is subtracted.
    pub fn lift_gamma_i(&self, omega: &InflowProfile) -> Result<Lifting> {
        let g = self.grid;
        let flux = omega.flux(&g);
        let phi: Vec<f64> = (0..g.nx).map(|i| bump(g.xc(i), g.length)).collect();
        let phi_int: f64 = phi.iter().sum::<f64>() * g.dx;
        let corrector: Vec<f64> = phi.iter().map(|v| -v / phi_int * flux).collect();
        let flux_compensation = (flux + corrector.iter().sum::<f64>() * g.dx).abs();
        let mut data = VelocityData::with_inflow(&g, omega);
        data.top = corrector.clone();
        let sol = self.wall.solve(&VectorField::zeros(g), &data)?;
        let mut u = sol.u;
        let mut p = sol.p;
        let mut edges = sol.edges;
        let mut outflow_u2_max = 0.0;
        if corrector.iter().any(|v| *v != 0.0) {
            let ls = self.lift_gamma_s(&BeamField { grid: g, data: corrector })?;
            u.axpy(-1.0, &ls.u);
            for (a, b) in p.data.iter_mut().zip(&ls.p.data) {
                *a -= b;
            }
            for (a, b) in edges.right_u2.iter_mut().zip(&ls.edges.right_u2) {
                *a -= b;
            }
            outflow_u2_max = edges.right_u2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        }
        Ok(Lifting { u, p, edges, outflow_u2_max, flux_compensation })
    }

    /// Harmonic extension of an outflow pressure datum, zero Neumann data on
    /// the Dirichlet part.
    pub fn lift_gamma_o(&self, theta: &[f64]) -> Result<ScalarField> {
        let mut bc = ScalarBc::homogeneous(&self.grid, self.outflow_lift.kinds);
        bc.outflow = theta.to_vec();
        self.outflow_lift.solve(&ScalarField::zeros(self.grid, Stagger::Cell), &bc)
    }

    /// Gradient of `lift_gamma_o(theta)` using its outflow data.
    pub fn lift_gamma_o_gradient(&self, ell: &ScalarField, theta: &[f64]) -> Result<VectorField> {
        let mut bc = ScalarBc::homogeneous(&self.grid, self.outflow_lift.kinds);
        bc.outflow = theta.to_vec();
        gradient_bc(ell, &bc)
    }

    fn ns_bc(&self, g: &[f64]) -> ScalarBc {
        let mut bc = ScalarBc::homogeneous(&self.grid, BcKinds::MIXED);
        bc.top = g.to_vec();
        bc
    }

    /// `N_s(g)`: harmonic, normal derivative `g` on the beam, zero Neumann on
    /// inflow and bottom, zero on the outflow.
    pub fn ns_operator(&self, g: &[f64]) -> Result<ScalarField> {
        self.leray.mixed_solver().solve(&ScalarField::zeros(self.grid, Stagger::Cell), &self.ns_bc(g))
    }

    /// `grad N_s(g)` including its boundary faces (top faces carry `g`).
    pub fn ns_gradient(&self, g: &[f64]) -> Result<VectorField> {
        let ns = self.ns_operator(g)?;
        gradient_bc(&ns, &self.ns_bc(g))
    }

    /// Added-mass kernel: beam-row values of `N_s(g)`.
    pub fn added_mass(&self, g: &[f64]) -> Result<Vec<f64>> {
        let ns = self.ns_operator(g)?;
        Ok(top_row(&ns))
    }

    /// `nu lap_h` of a full velocity carrying its boundary data, on the dof
    /// faces of the mixed layout.
    pub fn viscous_term(&self, u: &VectorField, e: &Edges) -> VectorField {
        self.mixed.viscous_term(u, e)
    }

    /// `N_v`: pressure part of the viscous term of a full velocity,
    /// `N_p(nu lap_h v)`. Harmonic with Neumann data the normal viscous
    /// trace whenever `lap_h v` is divergence-free.
    pub fn nv_operator(&self, v: &VectorField, e: &Edges) -> Result<ScalarField> {
        self.leray.np_operator(&self.viscous_term(v, e))
    }

    /// Discrete Stokes operator `A_s v = Pi(nu lap_h v)` on projected fields
    /// (zero boundary data).
    pub fn stokes_operator(&self, v: &VectorField) -> Result<VectorField> {
        self.leray.apply(&self.viscous_term(v, &Edges::zeros(&self.grid)))
    }

    /// Solves the mixed problem directly and through the projected
    /// formulation; returns relative discrepancies in velocity and pressure.
    pub fn stokes_projection_equivalence(&self, lambda: f64, f: &VectorField, g: &BeamField) -> Result<EquivalenceReport> {
        let gr = self.grid;
        let solver = if lambda == 0.0 { None } else { Some(StokesSolver::new(gr, RightBoundary::Outflow, lambda, self.nu)?) };
        let s = solver.as_ref().unwrap_or(&self.mixed);
        let direct = s.solve(f, &VelocityData::with_top(&gr, &g.data))?;

        let l1 = self.lift_beam(&g.data)?;
        let pi_l1 = self.leray.apply(&l1.u)?;
        let as_pi_l1 = self.stokes_operator(&pi_l1)?;
        let mut rhs = self.leray.apply(f)?;
        rhs.axpy(-1.0, &as_pi_l1);
        let w = s.solve(&rhs, &VelocityData::zeros(&gr))?;
        let mut u = w.u;
        u.axpy(1.0, &self.ns_gradient(&g.data)?);

        let ns = self.ns_operator(&g.data)?;
        let nv = self.nv_operator(&u, &direct.edges)?;
        let np = self.leray.np_operator(f)?;
        let p = ScalarField {
            data: (0..gr.n_cells()).map(|c| -lambda * ns.data[c] + nv.data[c] + np.data[c]).collect(),
            ..ns
        };
        let du = u.sub(&direct.u).norm();
        let dp: f64 = ScalarField { data: p.data.iter().zip(&direct.p.data).map(|(a, b)| a - b).collect(), ..p.clone() }.norm();
        let ru = du / direct.u.norm().max(f64::MIN_POSITIVE);
        let rp = dp / direct.p.norm().max(f64::MIN_POSITIVE);
        Ok(EquivalenceReport {
            velocity_discrepancy: if du == 0.0 { 0.0 } else { ru },
            pressure_discrepancy: if dp == 0.0 { 0.0 } else { rp },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub velocity_discrepancy: f64,
    pub pressure_discrepancy: f64,
}

/// Values of a cell field in the row under the beam.
pub fn top_row(p: &ScalarField) -> Vec<f64> {
    let g = &p.grid;
    (0..g.nx).map(|i| p.data[g.cell(i, g.nz - 1)]).collect()
}

/// Largest deviation of the top faces from a beam datum.
pub fn beam_trace_error(u: &VectorField, g: &[f64]) -> f64 {
    let gr = &u.grid;
    (0..gr.nx).fold(0.0f64, |m, i| m.max((u.u2[gr.zf(i, gr.nz)] - g[i]).abs()))
}

/// Sum of `u . n` over the whole boundary.
pub fn total_flux(u: &VectorField) -> f64 {
    u.flux(&Boundary::ALL)
}

/// Manufactured solution from the stream function
/// `psi = sin^2(pi x / L) sin^2(pi z)` with `p = c sin(pi x / L) cos(pi z)`.
/// Zero data on every boundary piece, including the outflow.
#[derive(Clone, Copy, Debug)]
pub struct Manufactured {
    pub len: f64,
    pub lambda: f64,
    pub nu: f64,
    pub c: f64,
}

impl Manufactured {
    pub fn u1(&self, x: f64, z: f64) -> f64 {
        let (a, b) = (PI / self.len, PI);
        b * (a * x).sin().powi(2) * (2.0 * b * z).sin()
    }
    pub fn u2(&self, x: f64, z: f64) -> f64 {
        let (a, b) = (PI / self.len, PI);
        -a * (2.0 * a * x).sin() * (b * z).sin().powi(2)
    }
    pub fn f1(&self, x: f64, z: f64) -> f64 {
        let (a, b) = (PI / self.len, PI);
        let lap = b * (2.0 * a * a * (2.0 * a * x).cos() * (2.0 * b * z).sin()
            - 4.0 * b * b * (a * x).sin().powi(2) * (2.0 * b * z).sin());
        let px = self.c * a * (a * x).cos() * (b * z).cos();
        self.lambda * self.u1(x, z) - self.nu * lap + px
    }
    pub fn f2(&self, x: f64, z: f64) -> f64 {
        let (a, b) = (PI / self.len, PI);
        let lap = -a * (-4.0 * a * a * (2.0 * a * x).sin() * (b * z).sin().powi(2)
            + 2.0 * b * b * (2.0 * a * x).sin() * (2.0 * b * z).cos());
        let pz = -self.c * b * (a * x).sin() * (b * z).sin();
        self.lambda * self.u2(x, z) - self.nu * lap + pz
    }
}

impl Manufactured {
    pub fn p(&self, x: f64, z: f64) -> f64 {
        self.c * (PI * x / self.len).sin() * (PI * z).cos()
    }

    pub fn forcing(&self, g: Grid2D) -> VectorField {
        VectorField::from_fn(g, |x, z| self.f1(x, z), |x, z| self.f2(x, z))
    }

    pub fn velocity(&self, g: Grid2D) -> VectorField {
        VectorField::from_fn(g, |x, z| self.u1(x, z), |x, z| self.u2(x, z))
    }
}
