//! Nonlinear periodic problem on the reference rectangle.
//!
//! The moving domain `0 < y < 1 + eta(x, t)` is mapped onto the unit
//! height by `z = y / (1 + eta)`. The geometric and convective terms that
//! this produces are evaluated pointwise on every time node and fed to the
//! linear periodic solver as data. Picard iteration of that map, started
//! from zero, gives the periodic solution for small forcing.

use crate::beam::d2_matrix;
use crate::coupled::CoupledSystem;
use crate::error::{Error, Result};
use crate::grid::{divergence, BeamField, Grid2D, ScalarField, Stagger, VectorField};
use crate::krylov::GmresOptions;
use crate::periodic::{solution_norm, solve_linear_periodic, LinearFsi, NodalData, PeriodicForcing, PeriodicTrajectory};
use crate::stokes::{top_row, Edges};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

// ------------------------------------------------------------ sampling

/// Values on a tensor grid of possibly non-uniform coordinates, row-major in `z`.
#[derive(Clone, Debug)]
struct Samples {
    xs: Vec<f64>,
    zs: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Z,
}

/// Three-point Lagrange weights for the derivative of `order` at `c[k]`.
fn weights(c: &[f64], k: usize, order: usize) -> ([usize; 3], [f64; 3]) {
    let n = c.len();
    let s = if k == 0 { 0 } else if k + 1 == n { n - 3 } else { k - 1 };
    let (a, b, d) = (c[s], c[s + 1], c[s + 2]);
    let x = c[k];
    let den = [(a - b) * (a - d), (b - a) * (b - d), (d - a) * (d - b)];
    let w = if order == 1 {
        [(2.0 * x - b - d) / den[0], (2.0 * x - a - d) / den[1], (2.0 * x - a - b) / den[2]]
    } else {
        [2.0 / den[0], 2.0 / den[1], 2.0 / den[2]]
    };
    ([s, s + 1, s + 2], w)
}

/// Linear interpolation cell and weight, clamped to the coordinate range.
fn locate(c: &[f64], x: f64) -> (usize, f64) {
    if c.len() == 1 {
        return (0, 0.0);
    }
    let k = c.partition_point(|v| *v <= x).clamp(1, c.len() - 1) - 1;
    let t = ((x - c[k]) / (c[k + 1] - c[k])).clamp(0.0, 1.0);
    (k, t)
}

impl Samples {
    fn new(xs: Vec<f64>, zs: Vec<f64>) -> Self {
        let v = vec![0.0; xs.len() * zs.len()];
        Samples { xs, zs, v }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.xs.len() + i
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.v[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, val: f64) {
        let k = self.idx(i, j);
        self.v[k] = val;
    }

    fn derivative(&self, axis: Axis, order: usize) -> Samples {
        let mut out = Samples::new(self.xs.clone(), self.zs.clone());
        for j in 0..self.zs.len() {
            for i in 0..self.xs.len() {
                let val = match axis {
                    Axis::X => {
                        let (s, w) = weights(&self.xs, i, order);
                        (0..3).map(|q| w[q] * self.get(s[q], j)).sum()
                    }
                    Axis::Z => {
                        let (s, w) = weights(&self.zs, j, order);
                        (0..3).map(|q| w[q] * self.get(i, s[q])).sum()
                    }
                };
                out.set(i, j, val);
            }
        }
        out
    }

    fn at(&self, x: f64, z: f64) -> f64 {
        let (i, tx) = locate(&self.xs, x);
        let (j, tz) = locate(&self.zs, z);
        let i1 = (i + 1).min(self.xs.len() - 1);
        let j1 = (j + 1).min(self.zs.len() - 1);
        let lo = (1.0 - tx) * self.get(i, j) + tx * self.get(i1, j);
        let hi = (1.0 - tx) * self.get(i, j1) + tx * self.get(i1, j1);
        (1.0 - tz) * lo + tz * hi
    }
}

/// `u1` on `x = i dx` and `z in {0, cell centres, 1}`, zero on both walls.
fn u1_samples(u: &VectorField) -> Samples {
    let g = u.grid;
    let xs = (0..=g.nx).map(|i| i as f64 * g.dx).collect();
    let zs = std::iter::once(0.0).chain((0..g.nz).map(|j| g.zc(j))).chain(std::iter::once(1.0)).collect();
    let mut s = Samples::new(xs, zs);
    for j in 0..g.nz {
        for i in 0..=g.nx {
            s.set(i, j + 1, u.u1[g.xf(i, j)]);
        }
    }
    s
}

/// `u2` on `x in {0, cell centres, L}` and `z = j dz`, zero on inflow and outflow.
fn u2_samples(u: &VectorField) -> Samples {
    let g = u.grid;
    let xs = std::iter::once(0.0).chain((0..g.nx).map(|i| g.xc(i))).chain(std::iter::once(g.length)).collect();
    let zs = (0..=g.nz).map(|j| j as f64 * g.dz).collect();
    let mut s = Samples::new(xs, zs);
    for j in 0..=g.nz {
        for i in 0..g.nx {
            s.set(i + 1, j, u.u2[g.zf(i, j)]);
        }
    }
    s
}

fn p_samples(p: &ScalarField) -> Samples {
    let g = p.grid;
    let mut s = Samples::new((0..g.nx).map(|i| g.xc(i)).collect(), (0..g.nz).map(|j| g.zc(j)).collect());
    for j in 0..g.nz {
        for i in 0..g.nx {
            s.set(i, j, p.data[g.cell(i, j)]);
        }
    }
    s
}

/// Beam quantity on `{0, nodes, L}` with zero wall values.
fn beam_samples(g: &Grid2D, b: &[f64]) -> Samples {
    let xs = std::iter::once(0.0).chain((0..g.nx).map(|i| g.xc(i))).chain(std::iter::once(g.length)).collect();
    let mut s = Samples::new(xs, vec![1.0]);
    for (i, v) in b.iter().enumerate() {
        s.set(i + 1, 0, *v);
    }
    s
}

/// `eta`, its derivatives and `eta_t` at one time node.
struct Geometry {
    eta: Samples,
    eta_x: Samples,
    eta_xx: Samples,
    eta_t: Samples,
}

impl Geometry {
    fn new(g: &Grid2D, eta: &[f64], eta_t: &[f64]) -> Result<Self> {
        let min = eta.iter().fold(f64::INFINITY, |m, v| m.min(1.0 + v));
        if !(min > 0.0) {
            return Err(Error::DomainDegeneracy { min_one_plus_eta: min });
        }
        let e = beam_samples(g, eta);
        let mut ex = e.derivative(Axis::X, 1);
        let last = ex.xs.len() - 1;
        ex.set(0, 0, 0.0);
        ex.set(last, 0, 0.0);
        let d2 = d2_matrix(g.nx, g.dx);
        let mut exx = Samples::new((0..g.nx).map(|i| g.xc(i)).collect(), vec![1.0]);
        for i in 0..g.nx {
            exx.set(i, 0, (0..g.nx).map(|k| d2[(i, k)] * eta[k]).sum());
        }
        Ok(Geometry { eta: e, eta_x: ex, eta_xx: exx, eta_t: beam_samples(g, eta_t) })
    }

    fn at(&self, x: f64) -> (f64, f64, f64, f64) {
        (self.eta.at(x, 1.0), self.eta_x.at(x, 1.0), self.eta_xx.at(x, 1.0), self.eta_t.at(x, 1.0))
    }
}

// ------------------------------------------------------------ types

/// `(u, p, eta, eta_t)` on the `N_t` time nodes of one period.
#[derive(Clone, Debug)]
pub struct TransformedSolution {
    pub period: f64,
    pub u: Vec<VectorField>,
    pub p: Vec<ScalarField>,
    pub eta: Vec<BeamField>,
    pub eta_t: Vec<BeamField>,
}

impl TransformedSolution {
    pub fn zeros(g: Grid2D, period: f64, steps: usize) -> Self {
        TransformedSolution {
            period,
            u: vec![VectorField::zeros(g); steps],
            p: vec![ScalarField::zeros(g, Stagger::Cell); steps],
            eta: vec![BeamField::zeros(g); steps],
            eta_t: vec![BeamField::zeros(g); steps],
        }
    }

    /// Drops the duplicated end node of a linear trajectory.
    pub fn from_trajectory(t: &PeriodicTrajectory) -> Self {
        let n = t.steps();
        TransformedSolution {
            period: t.period,
            u: t.velocity[..n].to_vec(),
            p: t.pressure[..n].to_vec(),
            eta: t.states[..n].iter().map(|s| s.eta.clone()).collect(),
            eta_t: t.states[..n].iter().map(|s| s.eta_t.clone()).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.u.len()
    }

    pub fn dt(&self) -> f64 {
        self.period / self.steps() as f64
    }

    pub fn grid(&self) -> Grid2D {
        self.u[0].grid
    }

    pub fn lin(&self, a: f64, other: &TransformedSolution, b: f64) -> TransformedSolution {
        let beam = |x: &BeamField, y: &BeamField| BeamField {
            grid: x.grid,
            data: x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect(),
        };
        TransformedSolution {
            period: self.period,
            u: self.u.iter().zip(&other.u).map(|(x, y)| x.scaled(a).add(&y.scaled(b))).collect(),
            p: self
                .p
                .iter()
                .zip(&other.p)
                .map(|(x, y)| ScalarField { data: x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect(), ..x.clone() })
                .collect(),
            eta: self.eta.iter().zip(&other.eta).map(|(x, y)| beam(x, y)).collect(),
            eta_t: self.eta_t.iter().zip(&other.eta_t).map(|(x, y)| beam(x, y)).collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> TransformedSolution {
        self.lin(a, self, 0.0)
    }

    pub fn sub(&self, other: &TransformedSolution) -> TransformedSolution {
        self.lin(1.0, other, -1.0)
    }

    /// Discrete stand-in for the solution norm.
    pub fn norm(&self, sys: &CoupledSystem) -> f64 {
        solution_norm(sys, self.dt(), &self.u, &self.p, &self.eta, &self.eta_t)
    }

    pub fn min_one_plus_eta(&self) -> f64 {
        self.eta.iter().flat_map(|e| e.data.iter()).fold(1.0, |m, v| m.min(1.0 + v))
    }
}

/// `(G, w, Theta, Psi)` on the time nodes.
#[derive(Clone, Debug)]
pub struct NonlinearEvaluation {
    pub g: Vec<VectorField>,
    pub w: Vec<VectorField>,
    /// Outflow pressure datum entering the linear problem.
    pub theta: Vec<Vec<f64>>,
    pub psi: Vec<BeamField>,
}

impl NonlinearEvaluation {
    pub fn into_nodal(self) -> NodalData {
        NodalData { f: self.g, w: self.w, theta: self.theta, h: self.psi }
    }

    pub fn sub(&self, o: &NonlinearEvaluation) -> NonlinearEvaluation {
        NonlinearEvaluation {
            g: self.g.iter().zip(&o.g).map(|(a, b)| a.sub(b)).collect(),
            w: self.w.iter().zip(&o.w).map(|(a, b)| a.sub(b)).collect(),
            theta: self.theta.iter().zip(&o.theta).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect()).collect(),
            psi: self
                .psi
                .iter()
                .zip(&o.psi)
                .map(|(a, b)| BeamField { grid: a.grid, data: a.data.iter().zip(&b.data).map(|(p, q)| p - q).collect() })
                .collect(),
        }
    }

    /// Per-functional sup-in-time norms `[G, w, Theta, Psi]`.
    pub fn component_norms(&self, sys: &CoupledSystem, dt: f64) -> [f64; 4] {
        let g = sys.grid;
        let n = self.g.len();
        let zero = Edges::zeros(&g);
        let form = sys.ops.form();
        let mut out = [0.0f64; 4];
        for k in 0..n {
            let w = &self.w[k];
            let w_t = self.w[(k + 1) % n].sub(&self.w[(k + n - 1) % n]).scaled(0.5 / dt);
            let lap = sys.ops.viscous_term(w, &zero).scaled(1.0 / sys.params.nu);
            out[0] = out[0].max(self.g[k].norm());
            out[1] = out[1].max(w.norm() + form.energy(w, &zero).max(0.0).sqrt() + lap.norm() + w_t.norm());
            out[2] = out[2].max(self.theta[k].iter().map(|v| v * v * g.dz).sum::<f64>().sqrt());
            out[3] = out[3].max(sys.beam.l2_inner(&self.psi[k].data, &self.psi[k].data).max(0.0).sqrt());
        }
        out
    }

    /// Sum of the component norms.
    pub fn norm(&self, sys: &CoupledSystem, dt: f64) -> f64 {
        self.component_norms(sys, dt).iter().sum()
    }
}

// ------------------------------------------------------------ evaluation

fn centered(series: &[VectorField], k: usize, dt: f64) -> VectorField {
    let n = series.len();
    series[(k + 1) % n].sub(&series[(k + n - 1) % n]).scaled(0.5 / dt)
}

/// Derivative arrays of one velocity component.
struct Component {
    s: Samples,
    x: Samples,
    z: Samples,
    xx: Samples,
    zz: Samples,
    xz: Samples,
}

impl Component {
    fn new(s: Samples) -> Self {
        let x = s.derivative(Axis::X, 1);
        let xz = x.derivative(Axis::Z, 1);
        Component {
            z: s.derivative(Axis::Z, 1),
            xx: s.derivative(Axis::X, 2),
            zz: s.derivative(Axis::Z, 2),
            x,
            xz,
            s,
        }
    }
}

struct Pointwise {
    x: f64,
    z: f64,
    u1: f64,
    u2: f64,
    ut: f64,
}

/// One component of `G` at a point where that component is sampled.
fn g_value(nu: f64, geo: &Geometry, c: &Component, ci: usize, cj: usize, pt: &Pointwise, pressure: Option<(f64, f64)>) -> f64 {
    let (eta, ex, exx, et) = geo.at(pt.x);
    let z = pt.z;
    let one = 1.0 + eta;
    let (uz, uxx, uzz, uxz, ux) = (c.z.get(ci, cj), c.xx.get(ci, cj), c.zz.get(ci, cj), c.xz.get(ci, cj), c.x.get(ci, cj));
    let mut val = -eta * pt.ut
        + (z * et + nu * z * (ex * ex / one - exx)) * uz
        + nu * (-2.0 * z * ex * uxz + eta * uxx + (z * z * ex * ex - eta) / one * uzz)
        - one * pt.u1 * ux
        + (z * ex * pt.u1 - pt.u2) * uz;
    if let Some((px, pz)) = pressure {
        val += z * ex * pz - z * eta * px;
    }
    val
}

/// All four nonlinear functionals on every time node. `u_t` and `eta_t`
/// come from the trajectory itself.
pub fn evaluate(sys: &CoupledSystem, x: &TransformedSolution) -> Result<NonlinearEvaluation> {
    let g = x.grid();
    let nu = sys.params.nu;
    let n = x.steps();
    let dt = x.dt();
    let mut out = NonlinearEvaluation { g: vec![], w: vec![], theta: vec![], psi: vec![] };
    for k in 0..n {
        let geo = Geometry::new(&g, &x.eta[k].data, &x.eta_t[k].data)?;
        let u = &x.u[k];
        let ut = centered(&x.u, k, dt);
        let c1 = Component::new(u1_samples(u));
        let c2 = Component::new(u2_samples(u));
        let p = p_samples(&x.p[k]);
        let (px, pz) = (p.derivative(Axis::X, 1), p.derivative(Axis::Z, 1));

        let mut gk = VectorField::zeros(g);
        let mut wk = VectorField::zeros(g);
        for j in 0..g.nz {
            let z = g.zc(j);
            for i in 0..=g.nx {
                let xx = i as f64 * g.dx;
                let f = g.xf(i, j);
                let (eta, _, _, _) = geo.at(xx);
                wk.u1[f] = -eta * u.u1[f];
                if i == 0 {
                    continue;
                }
                let pt = Pointwise { x: xx, z, u1: u.u1[f], u2: c2.s.at(xx, z), ut: ut.u1[f] };
                gk.u1[f] = g_value(nu, &geo, &c1, i, j + 1, &pt, Some((px.at(xx, z), pz.at(xx, z))));
            }
        }
        for j in 0..=g.nz {
            let z = j as f64 * g.dz;
            for i in 0..g.nx {
                let xx = g.xc(i);
                let f = g.zf(i, j);
                let (_, ex, _, _) = geo.at(xx);
                let u1 = c1.s.at(xx, z);
                wk.u2[f] = z * ex * u1;
                if j == 0 || j == g.nz {
                    continue;
                }
                let pt = Pointwise { x: xx, z, u1, u2: u.u2[f], ut: ut.u2[f] };
                gk.u2[f] = g_value(nu, &geo, &c2, i + 1, j, &pt, None);
            }
        }
        // u2 = 0 on the outflow, so |u|^2 is u1^2 there
        let theta = (0..g.nz).map(|j| -0.5 * u.u1[g.xf(g.nx, j)].powi(2)).collect();
        let mut psi = BeamField::zeros(g);
        for i in 0..g.nx {
            let xx = g.xc(i);
            let eta = x.eta[k].data[i];
            let ex = geo.eta_x.get(i + 1, 0);
            let one = 1.0 + eta;
            let u1z = c1.z.at(xx, 1.0);
            let u2x = c2.x.get(i + 1, g.nz);
            let u2z = c2.z.get(i + 1, g.nz);
            psi.data[i] = nu * (ex / one * u1z + ex * u2x - (ex * ex - 2.0 * eta) / one * u2z);
        }
        out.g.push(gk);
        out.w.push(wk);
        out.theta.push(theta);
        out.psi.push(psi);
    }
    Ok(out)
}

pub fn evaluate_g(sys: &CoupledSystem, x: &TransformedSolution) -> Result<Vec<VectorField>> {
    Ok(evaluate(sys, x)?.g)
}

pub fn evaluate_w(sys: &CoupledSystem, x: &TransformedSolution) -> Result<Vec<VectorField>> {
    Ok(evaluate(sys, x)?.w)
}

/// Outflow trace of `|u|^2 / 2`, one value per cell row.
pub fn evaluate_theta(x: &TransformedSolution) -> Vec<Vec<f64>> {
    let g = x.grid();
    x.u.iter().map(|u| (0..g.nz).map(|j| 0.5 * u.u1[g.xf(g.nx, j)].powi(2)).collect()).collect()
}

pub fn evaluate_psi(sys: &CoupledSystem, x: &TransformedSolution) -> Result<Vec<BeamField>> {
    Ok(evaluate(sys, x)?.psi)
}

// ------------------------------------------------------------ change of variables

/// Samples on vertical columns of the physical domain, heights ascending.
#[derive(Clone, Debug)]
pub struct ColumnField {
    pub x: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

fn interp1(xs: &[f64], vs: &[f64], x: f64) -> f64 {
    let (k, t) = locate(xs, x);
    let k1 = (k + 1).min(xs.len() - 1);
    (1.0 - t) * vs[k] + t * vs[k1]
}

fn check_domain(eta: &[f64]) -> Result<()> {
    let min = eta.iter().fold(f64::INFINITY, |m, e| m.min(1.0 + e));
    if min > 0.0 {
        Ok(())
    } else {
        Err(Error::DomainDegeneracy { min_one_plus_eta: min })
    }
}

/// Physical field on the columns `x[c]`, sampled at `y = k dy` below the
/// beam plus the beam itself, from transformed column data on `z`.
pub fn to_physical(x: &[f64], z: &[f64], vals: &[Vec<f64>], eta: &[f64], dy: f64) -> Result<ColumnField> {
    check_domain(eta)?;
    let mut out = ColumnField { x: x.to_vec(), y: vec![], v: vec![] };
    for (c, col) in vals.iter().enumerate() {
        let top = 1.0 + eta[c];
        let mut ys: Vec<f64> = (0..).map(|k| k as f64 * dy).take_while(|y| *y < top - 1e-12 * dy).collect();
        ys.push(top);
        out.v.push(ys.iter().map(|y| interp1(z, col, y / top)).collect());
        out.y.push(ys);
    }
    Ok(out)
}

/// Transformed column data on `z` from a physical field: `u(x, z (1 + eta))`.
pub fn to_transformed(phys: &ColumnField, z: &[f64], eta: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_domain(eta)?;
    Ok((0..phys.x.len()).map(|c| z.iter().map(|s| interp1(&phys.y[c], &phys.v[c], s * (1.0 + eta[c]))).collect()).collect())
}

/// Transformed samples of `f(x, y)` at `(x, z (1 + eta))`.
pub fn change_of_variables(x: &[f64], z: &[f64], eta: &[f64], f: impl Fn(f64, f64) -> f64) -> Result<Vec<Vec<f64>>> {
    check_domain(eta)?;
    Ok(x.iter().zip(eta).map(|(xx, e)| z.iter().map(|s| f(*xx, s * (1.0 + e))).collect()).collect())
}

/// Physical heights of every site at one time node; values are shared
/// with the transformed fields.
#[derive(Clone, Debug)]
pub struct DeformedNode {
    pub y_u1: Vec<f64>,
    pub y_u2: Vec<f64>,
    pub y_p: Vec<f64>,
}

pub fn deformed_node(g: &Grid2D, eta: &[f64]) -> Result<DeformedNode> {
    check_domain(eta)?;
    let e = beam_samples(g, eta);
    let mut y_u1 = vec![0.0; g.n_xfaces()];
    let mut y_u2 = vec![0.0; g.n_zfaces()];
    let mut y_p = vec![0.0; g.n_cells()];
    for j in 0..g.nz {
        for i in 0..=g.nx {
            y_u1[g.xf(i, j)] = g.zc(j) * (1.0 + e.at(i as f64 * g.dx, 1.0));
        }
        for i in 0..g.nx {
            y_p[g.cell(i, j)] = g.zc(j) * (1.0 + eta[i]);
        }
    }
    for j in 0..=g.nz {
        for i in 0..g.nx {
            y_u2[g.zf(i, j)] = j as f64 * g.dz * (1.0 + eta[i]);
        }
    }
    Ok(DeformedNode { y_u1, y_u2, y_p })
}

// ------------------------------------------------------------ fixed point

#[derive(Clone, Debug)]
pub struct NonlinearOptions {
    pub steps: usize,
    pub theta: f64,
    pub mu_star: f64,
    pub r_star: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Skip the smallness check on the forcing, reporting it instead.
    pub allow_large_forcing: bool,
    pub gmres: GmresOptions,
    pub defect_tol: f64,
}

impl Default for NonlinearOptions {
    fn default() -> Self {
        NonlinearOptions {
            steps: 64,
            theta: 0.5,
            mu_star: 2.0,
            r_star: 1.0,
            tol: 1e-8,
            max_iter: 30,
            allow_large_forcing: false,
            gmres: GmresOptions { tol: 1e-10, ..Default::default() },
            defect_tol: 1e-7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PicardRecord {
    pub iteration: usize,
    /// `|X_k - X_{k-1}|` in the solution norm.
    pub residual: f64,
    pub relative: f64,
    /// Ratio of successive residuals.
    pub rate: Option<f64>,
    pub r_margin: f64,
    pub mu_margin: f64,
    pub krylov_iterations: usize,
}

impl PicardRecord {
    pub fn line(&self) -> String {
        format!(
            "iter {:3} residual {:.6e} relative {:.6e} rate {} r_margin {:.6e} mu_margin {:.6e} krylov {}",
            self.iteration,
            self.residual,
            self.relative,
            self.rate.map_or("-".to_string(), |r| format!("{r:.4e}")),
            self.r_margin,
            self.mu_margin,
            self.krylov_iterations
        )
    }
}

/// One period of the linear problem, re-assembled for each data set.
pub struct FixedPointMap<'a> {
    pub sys: &'a CoupledSystem,
    fsi: LinearFsi<'a>,
    pub opts: NonlinearOptions,
}

impl<'a> FixedPointMap<'a> {
    pub fn new(sys: &'a CoupledSystem, period: f64, opts: NonlinearOptions) -> Result<Self> {
        if !(opts.mu_star > 1.0) || !(opts.r_star > 0.0) {
            return Err(Error::InvalidConfig(vec![format!(
                "ball needs mu* > 1 and R* > 0, got mu* = {}, R* = {}",
                opts.mu_star, opts.r_star
            )]));
        }
        let fsi = LinearFsi::new(sys, period, opts.steps, opts.theta)?;
        Ok(FixedPointMap { sys, fsi, opts })
    }

    /// Fails unless `1 + eta >= 1 / mu*` and `|X| <= R*`.
    pub fn check_ball(&self, x: &TransformedSolution) -> Result<(f64, f64)> {
        let m = x.min_one_plus_eta();
        let bound = 1.0 / self.opts.mu_star;
        if !(m >= bound) {
            return Err(Error::BallViolation { constraint: "1/(1+eta)", value: 1.0 / m.max(f64::MIN_POSITIVE), bound: self.opts.mu_star });
        }
        let norm = x.norm(self.sys);
        if !(norm <= self.opts.r_star) {
            return Err(Error::BallViolation { constraint: "norm", value: norm, bound: self.opts.r_star });
        }
        Ok((self.opts.r_star - norm, m - bound))
    }

    /// Linear periodic solve with data `(G, w, -|u|^2/2, Psi)` at `x`.
    pub fn apply(&mut self, x: &TransformedSolution, forcing: &PeriodicForcing, guess: Option<&[f64]>) -> Result<PeriodicTrajectory> {
        self.check_ball(x)?;
        let data = evaluate(self.sys, x)?;
        let mut f = forcing.clone();
        f.extra = Some(data.into_nodal());
        self.fsi.set_forcing(&f)?;
        solve_linear_periodic(&self.fsi, &self.opts.gmres, self.opts.defect_tol, guess)
    }
}

#[derive(Clone, Debug)]
pub struct NonlinearSolution {
    pub solution: TransformedSolution,
    pub trajectory: PeriodicTrajectory,
    pub history: Vec<PicardRecord>,
    pub converged: bool,
    /// `|X_1| / |data|`: the first iterate is the linear response.
    pub linear_constant: f64,
    pub physical: Vec<DeformedNode>,
    pub r_margin: f64,
    pub mu_margin: f64,
    /// Set when the smallness check was overridden and failed.
    pub warnings: Vec<String>,
}

impl NonlinearSolution {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn log(&self) -> String {
        self.history.iter().map(|r| r.line() + "\n").collect()
    }
}

/// Picard iteration of the fixed-point map from zero.
pub fn solve_periodic_fsi(sys: &CoupledSystem, forcing: &PeriodicForcing, opts: &NonlinearOptions) -> Result<NonlinearSolution> {
    solve_periodic_fsi_from(sys, forcing, opts, None)
}

/// As [`solve_periodic_fsi`], warm-started from `start` (continuation).
pub fn solve_periodic_fsi_from(
    sys: &CoupledSystem,
    forcing: &PeriodicForcing,
    opts: &NonlinearOptions,
    start: Option<&TransformedSolution>,
) -> Result<NonlinearSolution> {
    let mut map = FixedPointMap::new(sys, forcing.period, opts.clone())?;
    let mut x = start.cloned().unwrap_or_else(|| TransformedSolution::zeros(sys.grid, forcing.period, opts.steps));
    let data_norm = forcing.data_norm(&sys.grid, opts.steps);
    let mut history: Vec<PicardRecord> = Vec::new();
    let mut warnings = Vec::new();
    let mut guess: Option<Vec<f64>> = None;
    let mut linear_constant = 0.0;
    let mut last_traj = None;
    let mut converged = false;
    for it in 1..=opts.max_iter {
        let traj = map.apply(&x, forcing, guess.as_deref())?;
        let next = TransformedSolution::from_trajectory(&traj);
        let next_norm = next.norm(sys);
        let residual = next.sub(&x).norm(sys);
        let relative = if next_norm > 0.0 { residual / next_norm } else { residual };
        if it == 1 && start.is_none() && data_norm > 0.0 {
            linear_constant = next_norm / data_norm;
            let threshold = opts.r_star / (2.0 * linear_constant);
            if data_norm > threshold {
                let msg = format!(
                    "forcing norm {data_norm:.4e} above the smallness threshold R*/(2 C_L) = {threshold:.4e} (C_L = {linear_constant:.4e})"
                );
                if !opts.allow_large_forcing {
                    return Err(Error::BallViolation { constraint: "forcing", value: data_norm, bound: threshold });
                }
                warnings.push(msg);
            }
        }
        let rate = history.last().and_then(|r| if r.residual > 0.0 { Some(residual / r.residual) } else { None });
        let (r_margin, mu_margin) = (opts.r_star - next_norm, next.min_one_plus_eta() - 1.0 / opts.mu_star);
        history.push(PicardRecord { iteration: it, residual, relative, rate, r_margin, mu_margin, krylov_iterations: traj.krylov_iterations });
        guess = Some(traj.initial.clone());
        x = next;
        last_traj = Some(traj);
        if relative <= opts.tol {
            converged = true;
            break;
        }
        let rates: Vec<f64> = history.iter().rev().take(3).filter_map(|r| r.rate).collect();
        if rates.len() == 3 && rates.iter().all(|r| *r >= 1.0) {
            return Err(Error::NonContraction {
                rates,
                guidance: format!("reduce the forcing amplitude below about {:.3e} in data norm", 0.5 * data_norm),
            });
        }
    }
    let trajectory = last_traj.expect("at least one Picard iteration");
    let physical = x.eta.iter().map(|e| deformed_node(&sys.grid, &e.data)).collect::<Result<_>>()?;
    let last = history.last().expect("history");
    Ok(NonlinearSolution {
        r_margin: last.r_margin,
        mu_margin: last.mu_margin,
        solution: x,
        trajectory,
        converged,
        linear_constant,
        physical,
        warnings,
        history,
    })
}

// ------------------------------------------------------------ diagnostics

/// Residuals of the transformed system at a computed solution.
#[derive(Clone, Debug, Default)]
pub struct TransformedResiduals {
    /// `max |div u - div w| / max |div w|`, or absolute when `w` vanishes.
    pub divergence: f64,
    /// `max |u2 - eta_t|` on the beam.
    pub interface: f64,
    /// `p + |u|^2/2 - omega2` on the outflow, relative to `max |p|`.
    pub outflow: f64,
    /// Momentum balance on interior faces, relative to its largest term.
    pub momentum: f64,
    /// Beam equation, relative to its largest term.
    pub beam: f64,
}

impl TransformedResiduals {
    pub fn line(&self) -> String {
        format!(
            "divergence {:.3e} interface {:.3e} outflow {:.3e} momentum {:.3e} beam {:.3e}",
            self.divergence, self.interface, self.outflow, self.momentum, self.beam
        )
    }
}

pub fn transformed_residuals(sys: &CoupledSystem, x: &TransformedSolution, forcing: &PeriodicForcing) -> Result<TransformedResiduals> {
    let g = sys.grid;
    let nu = sys.params.nu;
    let n = x.steps();
    let dt = x.dt();
    let data = evaluate(sys, x)?;
    let zero = Edges::zeros(&g);
    let mut r = TransformedResiduals::default();
    let (mut div_scale, mut mom_scale, mut beam_scale, mut p_scale) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut mom, mut bm, mut outf) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..n {
        let u = &x.u[k];
        let du = divergence(u);
        let dw = divergence(&data.w[k]);
        for c in 0..du.data.len() {
            r.divergence = r.divergence.max((du.data[c] - dw.data[c]).abs());
            div_scale = div_scale.max(dw.data[c].abs());
        }
        for i in 0..g.nx {
            r.interface = r.interface.max((u.u2[g.zf(i, g.nz)] - x.eta_t[k].data[i]).abs());
        }
        let ut = centered(&x.u, k, dt);
        let visc = sys.ops.viscous_term(u, &zero);
        let p = &x.p[k];
        let gk = &data.g[k];
        let mut check = |t: f64, v: f64, gp: f64, gg: f64| {
            mom = mom.max((t - v + gp - gg).abs());
            mom_scale = mom_scale.max(t.abs()).max(v.abs()).max(gp.abs()).max(gg.abs());
        };
        for j in 0..g.nz {
            for i in 1..g.nx {
                let f = g.xf(i, j);
                let gp = (p.data[g.cell(i, j)] - p.data[g.cell(i - 1, j)]) / g.dx;
                check(ut.u1[f], visc.u1[f], gp, gk.u1[f]);
            }
        }
        for j in 1..g.nz {
            for i in 0..g.nx {
                let f = g.zf(i, j);
                let gp = (p.data[g.cell(i, j)] - p.data[g.cell(i, j - 1)]) / g.dz;
                check(ut.u2[f], visc.u2[f], gp, gk.u2[f]);
            }
        }
        let t = k as f64 * dt;
        let om2 = forcing.omega2_amplitude * forcing.omega2.eval(t, forcing.period);
        for j in 0..g.nz {
            let trace = 1.5 * p.data[g.cell(g.nx - 1, j)] - 0.5 * p.data[g.cell(g.nx - 2, j)];
            let want = om2 * forcing.omega2_shape.at(g.zc(j)) - 0.5 * u.u1[g.xf(g.nx, j)].powi(2);
            outf = outf.max((trace - want).abs());
            p_scale = p_scale.max(trace.abs()).max(want.abs());
        }
        let eta = &x.eta[k].data;
        let et = &x.eta_t[k].data;
        let ett: Vec<f64> = x.eta_t[(k + 1) % n].data.iter().zip(&x.eta_t[(k + n - 1) % n].data).map(|(a, b)| (a - b) * 0.5 / dt).collect();
        let ae = sys.beam.apply_a(eta);
        let le = sys.beam.apply_lap(et);
        let traction = sys.viscous_traction(u, &zero);
        let div_top = top_row(&du);
        let pt = top_row(p);
        for i in 0..g.nx {
            let load = pt[i] + traction[i] - nu * div_top[i] + data.psi[k].data[i];
            let elastic = ae[i] + sys.params.gamma * le[i];
            bm = bm.max((ett[i] - elastic - load).abs());
            beam_scale = beam_scale.max(ett[i].abs()).max(elastic.abs()).max(load.abs());
        }
    }
    let rel = |v: f64, s: f64| if s > 0.0 { v / s } else { v };
    r.divergence = rel(r.divergence, div_scale);
    r.momentum = rel(mom, mom_scale);
    r.beam = rel(bm, beam_scale);
    r.outflow = rel(outf, p_scale);
    Ok(r)
}

// ------------------------------------------------------------ probes

/// Smooth random `(u, p, eta)` with `eta` clamped, periodic in time.
pub fn random_transformed(sys: &CoupledSystem, period: f64, steps: usize, amplitude: f64, seed: u64) -> TransformedSolution {
    let g = sys.grid;
    let l = g.length;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coef = || rng.gen_range(-1.0..1.0);
    let (a1, a2, a3, ap, ae) = (coef(), coef(), coef(), coef(), coef());
    let (p1, p2, pe) = (coef() * PI, coef() * PI, coef() * PI);
    let w = 2.0 * PI / period;
    let mut out = TransformedSolution::zeros(g, period, steps);
    for k in 0..steps {
        let t = k as f64 * period / steps as f64;
        let (c1, c2) = ((w * t + p1).cos(), (w * t + p2).sin());
        out.u[k] = VectorField::from_fn(
            g,
            |x, z| amplitude * (a1 * c1 * (PI * z).sin() + a2 * c2 * (PI * x / l).cos() * (2.0 * PI * z).sin()),
            |x, z| amplitude * a3 * c1 * (PI * x / l).sin() * (PI * z).sin(),
        );
        out.p[k] = ScalarField::from_fn(g, Stagger::Cell, |x, z| amplitude * ap * c2 * (1.0 - x / l) * (PI * z).cos());
        let shape = |x: f64| (PI * x / l).sin().powi(2);
        out.eta[k] = BeamField::from_fn(g, |x| amplitude * ae * shape(x) * (w * t + pe).cos());
        out.eta_t[k] = BeamField::from_fn(g, |x| -amplitude * ae * w * shape(x) * (w * t + pe).sin());
    }
    out
}

/// `|F(eps X)| / eps^2` per functional `[G, w, Theta, Psi]`.
pub fn quadratic_ratios(sys: &CoupledSystem, x: &TransformedSolution, eps: f64) -> Result<[f64; 4]> {
    let e = evaluate(sys, &x.scaled(eps))?;
    let n = e.component_norms(sys, x.dt());
    Ok(n.map(|v| v / (eps * eps)))
}

/// `|F(X1) - F(X2)|_W / |X1 - X2|_X` over `pairs` random pairs of the given amplitude.
pub fn lipschitz_constant(sys: &CoupledSystem, period: f64, steps: usize, amplitude: f64, pairs: usize, seed: u64) -> Result<f64> {
    let mut c = 0.0f64;
    for s in 0..pairs as u64 {
        let a = random_transformed(sys, period, steps, amplitude, seed.wrapping_add(2 * s));
        let b = random_transformed(sys, period, steps, amplitude, seed.wrapping_add(2 * s + 1));
        let d = evaluate(sys, &a)?.sub(&evaluate(sys, &b)?);
        c = c.max(d.norm(sys, a.dt()) / a.sub(&b).norm(sys));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam::BeamParams;

    fn system(nx: usize, nz: usize) -> CoupledSystem {
        let g = Grid2D::new(nx, nz, 2.0).unwrap();
        CoupledSystem::new(g, BeamParams::new(1.0, 0.0, 0.5, 0.1).unwrap()).unwrap()
    }

    #[test]
    fn lagrange_weights_are_exact_on_quadratics() {
        let c = [0.0, 0.05, 0.15, 0.25, 0.3];
        let f = |x: f64| 3.0 * x * x - x + 2.0;
        for k in 0..c.len() {
            let (s, w) = weights(&c, k, 1);
            let d: f64 = (0..3).map(|q| w[q] * f(c[s[q]])).sum();
            assert!((d - (6.0 * c[k] - 1.0)).abs() < 1e-12);
            let (s, w) = weights(&c, k, 2);
            let d: f64 = (0..3).map(|q| w[q] * f(c[s[q]])).sum();
            assert!((d - 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_state_gives_zero_terms() {
        let sys = system(12, 6);
        let x = TransformedSolution::zeros(sys.grid, 1.0, 8);
        let e = evaluate(&sys, &x).unwrap();
        assert!(e.g.iter().chain(&e.w).all(|v| v.max_abs() == 0.0));
        assert!(e.theta.iter().flatten().all(|v| *v == 0.0));
        assert!(e.psi.iter().flat_map(|b| &b.data).all(|v| *v == 0.0));
    }

    #[test]
    fn flat_beam_leaves_convection_only() {
        let sys = system(16, 8);
        let g = sys.grid;
        let mut x = random_transformed(&sys, 1.0, 8, 0.3, 7);
        for k in 0..8 {
            x.eta[k] = BeamField::zeros(g);
            x.eta_t[k] = BeamField::zeros(g);
        }
        let e = evaluate(&sys, &x).unwrap();
        assert!(e.w.iter().all(|w| w.max_abs() == 0.0));
        assert!(e.psi.iter().flat_map(|b| &b.data).all(|v| *v == 0.0));
        // independent convection: -u1 u_x - u2 u_z by centred differences on interior faces
        let u = &x.u[3];
        for j in 1..g.nz - 1 {
            for i in 1..g.nx {
                let f = g.xf(i, j);
                let ux = (u.u1[g.xf(i + 1, j)] - u.u1[g.xf(i - 1, j)]) / (2.0 * g.dx);
                let uz = (u.u1[g.xf(i, j + 1)] - u.u1[g.xf(i, j - 1)]) / (2.0 * g.dz);
                let u2 = 0.25 * (u.u2[g.zf(i - 1, j)] + u.u2[g.zf(i, j)] + u.u2[g.zf(i - 1, j + 1)] + u.u2[g.zf(i, j + 1)]);
                let want = -u.u1[f] * ux - u2 * uz;
                assert!((e.g[3].u1[f] - want).abs() < 1e-12, "{} {}", e.g[3].u1[f], want);
            }
        }
    }

    #[test]
    fn w_vanishes_on_the_boundary() {
        let sys = system(12, 6);
        let g = sys.grid;
        let x = random_transformed(&sys, 1.0, 6, 0.2, 3);
        for w in evaluate(&sys, &x).unwrap().w {
            for j in 0..g.nz {
                assert_eq!(w.u1[g.xf(0, j)], 0.0);
                assert!(w.u1[g.xf(g.nx, j)].abs() < 1e-15);
            }
            for i in 0..g.nx {
                assert_eq!(w.u2[g.zf(i, 0)], 0.0);
                assert!(w.u2[g.zf(i, g.nz)].abs() < 1e-15);
            }
        }
    }

    #[test]
    fn terms_are_quadratic() {
        let sys = system(16, 8);
        let x = random_transformed(&sys, 1.0, 8, 0.5, 11);
        let r: Vec<[f64; 4]> = [1e-1, 1e-2, 1e-3].iter().map(|e| quadratic_ratios(&sys, &x, *e).unwrap()).collect();
        for c in 0..4 {
            let (lo, hi) = r.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v[c]), b.max(v[c])));
            assert!(lo > 0.0 && hi <= 1.2 * lo, "component {c}: {r:?}");
        }
        assert!(lipschitz_constant(&sys, 1.0, 8, 0.1, 2, 5).unwrap().is_finite());
    }

    #[test]
    fn degenerate_domain_is_rejected() {
        let sys = system(12, 6);
        let mut x = TransformedSolution::zeros(sys.grid, 1.0, 4);
        x.eta[2].data[5] = -1.0;
        assert!(matches!(evaluate(&sys, &x), Err(Error::DomainDegeneracy { .. })));
    }

    #[test]
    fn change_of_variables_round_trip() {
        let g = Grid2D::new(8, 4, 2.0).unwrap();
        let z: Vec<f64> = (0..=4).map(|j| j as f64 / 4.0).collect();
        let x: Vec<f64> = (0..8).map(|i| g.xc(i)).collect();
        let flat = vec![0.0; 8];
        let f = |x: f64, y: f64| x * y + 1.0;
        assert_eq!(change_of_variables(&x, &z, &flat, f).unwrap()[3], z.iter().map(|s| f(x[3], *s)).collect::<Vec<_>>());
        // constant eta: affine, exact up to rounding
        let c = vec![0.25; 8];
        let t = change_of_variables(&x, &z, &c, f).unwrap();
        let phys = to_physical(&x, &z, &t, &c, 0.125).unwrap();
        assert!(phys.y.iter().all(|ys| (ys[ys.len() - 1] - 1.25).abs() < 1e-15));
        let back = to_transformed(&phys, &z, &c).unwrap();
        for (a, b) in back.iter().flatten().zip(t.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(to_physical(&x, &z, &t, &vec![-1.5; 8], 0.1), Err(Error::DomainDegeneracy { .. })));
    }

    #[test]
    fn round_trip_converges_at_second_order() {
        let err = |nx: usize, nz: usize| {
            let g = Grid2D::new(nx, nz, 2.0).unwrap();
            let x: Vec<f64> = (0..nx).map(|i| g.xc(i)).collect();
            let z: Vec<f64> = (0..=nz).map(|j| j as f64 / nz as f64).collect();
            let eta: Vec<f64> = x.iter().map(|x| 0.1 * (PI * x / 2.0).sin()).collect();
            let f = |x: f64, y: f64| (x + 2.0 * y).sin();
            let t = change_of_variables(&x, &z, &eta, f).unwrap();
            let phys = to_physical(&x, &z, &t, &eta, 0.7 / nz as f64).unwrap();
            let back = to_transformed(&phys, &z, &eta).unwrap();
            back.iter().flatten().zip(t.iter().flatten()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        };
        let (e1, e2) = (err(32, 16), err(64, 32));
        assert!(e2 <= 1e-3);
        assert!((e1 / e2).log2() >= 1.8, "{e1} {e2}");
    }

    #[test]
    fn zero_forcing_converges_immediately() {
        let sys = system(12, 6);
        let opts = NonlinearOptions { steps: 16, ..Default::default() };
        let s = solve_periodic_fsi(&sys, &PeriodicForcing::zero(1.0), &opts).unwrap();
        assert!(s.converged && s.iterations() == 1);
        assert!(s.solution.u.iter().all(|u| u.max_abs() == 0.0));
    }

    #[test]
    fn small_forcing_contracts_and_first_iterate_is_linear() {
        let sys = system(12, 6);
        let opts = NonlinearOptions { steps: 16, ..Default::default() };
        let f = PeriodicForcing::outflow_sine(1.0, 1e-2);
        let s = solve_periodic_fsi(&sys, &f, &opts).unwrap();
        assert!(s.converged, "{}", s.log());
        assert!(s.history.iter().filter_map(|r| r.rate).all(|r| r < 0.5), "{}", s.log());
        let lin = crate::periodic::solve_periodic_linear_fsi(
            &sys,
            &f,
            &crate::periodic::PeriodicOptions { steps: 16, gmres: opts.gmres.clone(), ..Default::default() },
        )
        .unwrap();
        let x1 = TransformedSolution::from_trajectory(&lin);
        let diff = s.solution.sub(&x1).norm(&sys) / x1.norm(&sys);
        assert!(diff > 0.0 && diff < 0.05, "{diff}");
        let r = transformed_residuals(&sys, &s.solution, &f).unwrap();
        assert!(r.interface <= 1e-12 && r.divergence <= 1e-8, "{}", r.line());
        assert!(s.mu_margin > 0.0 && s.r_margin > 0.0);
    }

    #[test]
    fn ball_violation_is_reported() {
        let sys = system(12, 6);
        let opts = NonlinearOptions { steps: 16, r_star: 1e-6, ..Default::default() };
        let f = PeriodicForcing::outflow_sine(1.0, 1e-2);
        assert!(matches!(solve_periodic_fsi(&sys, &f, &opts), Err(Error::BallViolation { .. })));
        let mut map = FixedPointMap::new(&sys, 1.0, NonlinearOptions { steps: 16, ..Default::default() }).unwrap();
        let mut x = TransformedSolution::zeros(sys.grid, 1.0, 16);
        x.eta[0].data[3] = -0.7;
        assert!(matches!(map.apply(&x, &f, None), Err(Error::BallViolation { constraint: "1/(1+eta)", .. })));
    }
}
