//! Periodic solutions of the linear coupled system.
//!
//! The periodic initial condition solves `(I - S(T)) z = b`, with `S(T)` the
//! unforced one-period map and `b` the forced response from rest. `I - S(T)`
//! is applied matrix-free, one time-march per application, and inverted by
//! GMRES in the energy inner product. Everything is generic over
//! [`Evolution`] so the same code runs on closed-form surrogates.

use crate::coupled::{CoupledState, CoupledSystem, Stepper};
use crate::dense::{self, Mat, C64};
use crate::error::{Error, Result};
use crate::grid::{divergence, BeamField, Grid2D, ScalarField, Stagger, VectorField};
use crate::krylov::{arnoldi, gmres, GmresOptions, GmresResult, RitzReport};
use crate::stokes::{top_row, Edges, InflowProfile, StokesSolution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// `mean + sum_m cos[m-1] cos(2 pi m t / T) + sin[m-1] sin(2 pi m t / T)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierSeries {
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl FourierSeries {
    pub fn sine(amplitude: f64) -> Self {
        FourierSeries { mean: 0.0, cos: vec![], sin: vec![amplitude] }
    }

    pub fn cosine(amplitude: f64) -> Self {
        FourierSeries { mean: 0.0, cos: vec![amplitude], sin: vec![] }
    }

    pub fn eval(&self, t: f64, period: f64) -> f64 {
        let w = 2.0 * PI / period;
        let c: f64 = self.cos.iter().enumerate().map(|(m, a)| a * (w * (m + 1) as f64 * t).cos()).sum();
        let s: f64 = self.sin.iter().enumerate().map(|(m, b)| b * (w * (m + 1) as f64 * t).sin()).sum();
        self.mean + c + s
    }

    pub fn derivative(&self, t: f64, period: f64) -> f64 {
        let w = 2.0 * PI / period;
        let c: f64 = self.cos.iter().enumerate().map(|(m, a)| -a * w * (m + 1) as f64 * (w * (m + 1) as f64 * t).sin()).sum();
        let s: f64 = self.sin.iter().enumerate().map(|(m, b)| b * w * (m + 1) as f64 * (w * (m + 1) as f64 * t).cos()).sum();
        c + s
    }

    pub fn is_zero(&self) -> bool {
        self.mean == 0.0 && self.cos.iter().chain(&self.sin).all(|v| *v == 0.0)
    }

    pub fn scaled(&self, a: f64) -> Self {
        FourierSeries {
            mean: a * self.mean,
            cos: self.cos.iter().map(|v| a * v).collect(),
            sin: self.sin.iter().map(|v| a * v).collect(),
        }
    }
}

/// Vertical shape of the outflow pressure datum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutflowShape {
    #[default]
    Uniform,
    SinPi,
}

impl OutflowShape {
    pub fn at(self, z: f64) -> f64 {
        match self {
            OutflowShape::Uniform => 1.0,
            OutflowShape::SinPi => (PI * z).sin(),
        }
    }
}

/// Inflow profile shape `(z (1 - z))^2`; vanishes with its derivative at the corners.
pub fn inflow_shape(z: f64) -> f64 {
    (z * (1.0 - z)).powi(2)
}

/// Volumetric and boundary data sampled on the `N_t` time nodes.
#[derive(Clone, Debug)]
pub struct NodalData {
    pub f: Vec<VectorField>,
    /// Divergence datum; must vanish on the boundary.
    pub w: Vec<VectorField>,
    /// Extra outflow pressure, one value per cell row.
    pub theta: Vec<Vec<f64>>,
    pub h: Vec<BeamField>,
}

impl NodalData {
    pub fn zeros(g: Grid2D, steps: usize) -> Self {
        NodalData {
            f: vec![VectorField::zeros(g); steps],
            w: vec![VectorField::zeros(g); steps],
            theta: vec![vec![0.0; g.nz]; steps],
            h: vec![BeamField::zeros(g); steps],
        }
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }
}

/// `omega1 = A1 s1(t) (z(1-z))^2 e1` on the inflow, `omega2 = A2 s2(t) shape(z)`
/// on the outflow, plus optional nodal data.
#[derive(Clone, Debug)]
pub struct PeriodicForcing {
    pub period: f64,
    pub omega1_amplitude: f64,
    pub omega1: FourierSeries,
    pub omega2_amplitude: f64,
    pub omega2: FourierSeries,
    pub omega2_shape: OutflowShape,
    pub extra: Option<NodalData>,
}

impl PeriodicForcing {
    pub fn zero(period: f64) -> Self {
        PeriodicForcing {
            period,
            omega1_amplitude: 0.0,
            omega1: FourierSeries::default(),
            omega2_amplitude: 0.0,
            omega2: FourierSeries::default(),
            omega2_shape: OutflowShape::Uniform,
            extra: None,
        }
    }

    /// `omega2 = eps sin(2 pi t / T)`, no inflow.
    pub fn outflow_sine(period: f64, eps: f64) -> Self {
        PeriodicForcing { omega2_amplitude: eps, omega2: FourierSeries::sine(1.0), ..Self::zero(period) }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let extra = self.extra.as_ref().map(|d| NodalData {
            f: d.f.iter().map(|v| v.scaled(a)).collect(),
            w: d.w.iter().map(|v| v.scaled(a)).collect(),
            theta: d.theta.iter().map(|v| v.iter().map(|x| a * x).collect()).collect(),
            h: d.h.iter().map(|b| BeamField { grid: b.grid, data: b.data.iter().map(|x| a * x).collect() }).collect(),
        });
        PeriodicForcing {
            omega1_amplitude: a * self.omega1_amplitude,
            omega2_amplitude: a * self.omega2_amplitude,
            extra,
            ..self.clone()
        }
    }

    pub fn boundary_is_zero(&self) -> bool {
        (self.omega1_amplitude == 0.0 || self.omega1.is_zero()) && (self.omega2_amplitude == 0.0 || self.omega2.is_zero())
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.period > 0.0) || !self.period.is_finite() {
            errs.push(format!("period must be positive, got {}", self.period));
        }
        for (name, v) in [("omega1 amplitude", self.omega1_amplitude), ("omega2 amplitude", self.omega2_amplitude)] {
            if !v.is_finite() {
                errs.push(format!("{name} must be finite"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }

    /// Sup over the time nodes of the boundary data in L2 plus a half-order
    /// difference quotient: a stand-in for the Holder data norm.
    pub fn data_norm(&self, g: &Grid2D, steps: usize) -> f64 {
        let dt = self.period / steps as f64;
        let prof1 = (0..g.nz).map(|j| inflow_shape(g.zc(j)).powi(2) * g.dz).sum::<f64>().sqrt();
        let prof2 = (0..g.nz).map(|j| self.omega2_shape.at(g.zc(j)).powi(2) * g.dz).sum::<f64>().sqrt();
        let a1 = |t: f64| self.omega1_amplitude.abs() * prof1 * self.omega1.eval(t, self.period);
        let a1t = |t: f64| self.omega1_amplitude.abs() * prof1 * self.omega1.derivative(t, self.period);
        let a2 = |t: f64| self.omega2_amplitude.abs() * prof2 * self.omega2.eval(t, self.period);
        let mut sup = 0.0f64;
        let mut holder = 0.0f64;
        for n in 0..steps {
            let (t, t1) = (n as f64 * dt, (n + 1) as f64 * dt);
            sup = sup.max(a1(t).abs() + a1t(t).abs() + a2(t).abs());
            holder = holder.max(((a1(t1) - a1(t)).abs() + (a1t(t1) - a1t(t)).abs() + (a2(t1) - a2(t)).abs()) / dt.sqrt());
        }
        sup + holder
    }
}

/// A linear periodic evolution `y' = A y + f` advanced over one period.
pub trait Evolution {
    fn dim(&self) -> usize;
    fn inner(&self, a: &[f64], b: &[f64]) -> f64;
    /// End state after one period from `y0`, with or without the forcing.
    fn propagate(&self, y0: &[f64], forced: bool) -> Result<Vec<f64>>;
    /// Deterministic start vector for Arnoldi, inside the state space.
    fn start_vector(&self) -> Result<Vec<f64>>;

    fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }
}

pub fn propagate_period<E: Evolution + ?Sized>(e: &E, z: &[f64], forced: bool) -> Result<Vec<f64>> {
    e.propagate(z, forced)
}

#[derive(Clone, Debug)]
pub struct PeriodicSolve {
    pub z: Vec<f64>,
    pub krylov: GmresResult,
    /// `|propagate(z, forced) - z|` in the evolution norm.
    pub defect: f64,
    pub rhs_norm: f64,
}

/// `(I - S(T)) z = propagate(0, forced)` by GMRES.
pub fn solve_periodic_initial_condition<E: Evolution + ?Sized>(
    e: &E,
    opts: &GmresOptions,
    guess: Option<&[f64]>,
) -> Result<PeriodicSolve> {
    let zero = vec![0.0; e.dim()];
    let b = e.propagate(&zero, true)?;
    let inner = |a: &[f64], c: &[f64]| e.inner(a, c);
    let mut apply = |x: &[f64]| -> Result<Vec<f64>> {
        let sx = e.propagate(x, false)?;
        Ok(x.iter().zip(&sx).map(|(p, q)| p - q).collect())
    };
    let krylov = match gmres(&mut apply, &inner, &b, guess, opts) {
        Ok(k) => k,
        Err(Error::SolverFailure { history, .. }) => {
            let rho = check_spectral_criterion(e, 20, 1e-6).map(|r| r.rho_max).unwrap_or(f64::NAN);
            return Err(Error::SolverFailure {
                what: format!("periodic GMRES (dominant monodromy eigenvalue estimate |mu| = {rho:.6})"),
                history,
            });
        }
        Err(other) => return Err(other),
    };
    let end = e.propagate(&krylov.x, true)?;
    let d: Vec<f64> = end.iter().zip(&krylov.x).map(|(p, q)| p - q).collect();
    Ok(PeriodicSolve { defect: e.norm(&d), rhs_norm: e.norm(&b), z: krylov.x.clone(), krylov })
}

#[derive(Clone, Debug)]
pub struct SpectralCriterion {
    pub rho_max: f64,
    /// Leading Ritz values of the monodromy map.
    pub dominant: Vec<C64>,
    /// Ritz residual of the dominant pair.
    pub residual: f64,
    /// Distance from 1 to the nearest Ritz value.
    pub distance_from_one: f64,
    pub conclusive: bool,
    pub admissible: bool,
}

/// Arnoldi on the unforced monodromy map.
pub fn check_spectral_criterion<E: Evolution + ?Sized>(e: &E, steps: usize, margin: f64) -> Result<SpectralCriterion> {
    let v0 = e.start_vector()?;
    let inner = |a: &[f64], c: &[f64]| e.inner(a, c);
    let mut apply = |x: &[f64]| e.propagate(x, false);
    let m = steps.min(e.dim()).max(1);
    let RitzReport { values, residuals, exhausted } = arnoldi(&mut apply, &inner, &v0, m)?;
    let rho_max = values[0].norm();
    let residual = residuals[0];
    let distance_from_one = values.iter().map(|v| (*v - C64::new(1.0, 0.0)).norm()).fold(f64::INFINITY, f64::min);
    let conclusive = exhausted || residual <= 1e-6 * rho_max.max(1e-3);
    Ok(SpectralCriterion {
        rho_max,
        dominant: values.into_iter().take(6).collect(),
        residual,
        distance_from_one,
        conclusive,
        admissible: conclusive && distance_from_one > margin,
    })
}

// ------------------------------------------------------------ surrogates

/// `y_i' = rate_i y_i + f_i(t)` with the theta scheme.
#[derive(Clone, Debug)]
pub struct DiagonalSurrogate {
    pub rates: Vec<f64>,
    pub forcing: Vec<FourierSeries>,
    pub period: f64,
    pub steps: usize,
    pub theta: f64,
}

impl DiagonalSurrogate {
    pub fn scalar(rate: f64, forcing: FourierSeries, period: f64, steps: usize) -> Self {
        DiagonalSurrogate { rates: vec![rate], forcing: vec![forcing], period, steps, theta: 0.5 }
    }
}

impl Evolution for DiagonalSurrogate {
    fn dim(&self) -> usize {
        self.rates.len()
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(p, q)| p * q).sum()
    }

    fn propagate(&self, y0: &[f64], forced: bool) -> Result<Vec<f64>> {
        let dt = self.period / self.steps as f64;
        let th = self.theta;
        let mut y = y0.to_vec();
        for n in 0..self.steps {
            let (t0, t1) = (n as f64 * dt, (n + 1) as f64 * dt);
            for (i, yi) in y.iter_mut().enumerate() {
                let a = self.rates[i];
                let f = if forced {
                    let s = &self.forcing[i];
                    (1.0 - th) * s.eval(t0, self.period) + th * s.eval(t1, self.period)
                } else {
                    0.0
                };
                *yi = ((1.0 + (1.0 - th) * dt * a) * *yi + dt * f) / (1.0 - th * dt * a);
            }
        }
        Ok(y)
    }

    fn start_vector(&self) -> Result<Vec<f64>> {
        Ok(vec![1.0; self.dim()])
    }
}

// ------------------------------------------------------------ linear FSI

/// Forcing of the primitive system and the lifted parts needed to rebuild
/// `(u, p)`, all on the time nodes.
#[derive(Clone, Debug)]
pub struct AssembledForcing {
    pub r: Vec<Vec<f64>>,
    /// `F` of the reduced fluid problem.
    pub fluid: Vec<VectorField>,
    /// `w + L_{Gamma_i,1}(omega1)`.
    pub lift_u: Vec<VectorField>,
    /// `L_{Gamma_o}(omega2 + Theta) + L_{Gamma_i,2}(omega1)`.
    pub lift_p: Vec<ScalarField>,
}

/// `nu (div w)` in the top cells, the part of `2 nu w_{2,z}` the form misses.
fn top_divergence(w: &VectorField) -> Vec<f64> {
    top_row(&divergence(w))
}

pub fn assemble_forcing(sys: &CoupledSystem, forcing: &PeriodicForcing, steps: usize) -> Result<AssembledForcing> {
    forcing.validate()?;
    let g = sys.grid;
    let nu = sys.params.nu;
    let ops = &sys.ops;
    let dt = forcing.period / steps as f64;
    if let Some(d) = &forcing.extra {
        if d.f.len() != steps || d.w.len() != steps || d.theta.len() != steps || d.h.len() != steps {
            return Err(Error::GridMismatch(format!("nodal data has {} nodes, expected {steps}", d.len())));
        }
    }
    let inflow: Option<StokesSolution> = if forcing.omega1_amplitude != 0.0 && !forcing.omega1.is_zero() {
        let a = forcing.omega1_amplitude;
        Some(ops.lift_inflow(&InflowProfile::from_fn(&g, |z| a * inflow_shape(z), |_| 0.0))?)
    } else {
        None
    };
    let zero_e = Edges::zeros(&g);
    let inflow_traction = inflow.as_ref().map(|l| sys.viscous_traction(&l.u, &l.edges));
    let mut out = AssembledForcing { r: vec![], fluid: vec![], lift_u: vec![], lift_p: vec![] };
    for n in 0..steps {
        let t = n as f64 * dt;
        let s1 = forcing.omega1.eval(t, forcing.period);
        let ds1 = forcing.omega1.derivative(t, forcing.period);
        let s2 = forcing.omega2_amplitude * forcing.omega2.eval(t, forcing.period);
        let mut theta: Vec<f64> = (0..g.nz).map(|j| s2 * forcing.omega2_shape.at(g.zc(j))).collect();
        let mut f = VectorField::zeros(g);
        let mut h = vec![0.0; g.nx];
        let mut lift_u = VectorField::zeros(g);
        if let Some(d) = &forcing.extra {
            for (a, b) in theta.iter_mut().zip(&d.theta[n]) {
                *a += b;
            }
            let w = &d.w[n];
            let w_t = d.w[(n + 1) % steps].sub(&d.w[(n + steps - 1) % steps]).scaled(0.5 / dt);
            f.axpy(1.0, &d.f[n]);
            f.axpy(-1.0, &w_t);
            f.axpy(1.0, &ops.viscous_term(w, &zero_e));
            let tr = sys.viscous_traction(w, &zero_e);
            let dv = top_divergence(w);
            for i in 0..g.nx {
                h[i] += d.h[n].data[i] + tr[i] - nu * dv[i];
            }
            lift_u.axpy(1.0, w);
        }
        let lo = ops.lift_gamma_o(&theta)?;
        f.axpy(-1.0, &ops.lift_gamma_o_gradient(&lo, &theta)?);
        let mut lift_p = lo.clone();
        for (a, b) in h.iter_mut().zip(top_row(&lo)) {
            *a += b;
        }
        if let (Some(l), Some(tr)) = (&inflow, &inflow_traction) {
            f.axpy(-ds1, &l.u);
            let lp = top_row(&l.p);
            for i in 0..g.nx {
                h[i] += s1 * (lp[i] + tr[i]);
            }
            lift_u.axpy(s1, &l.u);
            for (a, b) in lift_p.data.iter_mut().zip(&l.p.data) {
                *a += s1 * b;
            }
        }
        out.r.push(sys.primitive_forcing(&f, &h));
        out.fluid.push(f);
        out.lift_u.push(lift_u);
        out.lift_p.push(lift_p);
    }
    Ok(out)
}

/// The linear coupled system over one period on the primitive unknowns.
pub struct LinearFsi<'a> {
    pub sys: &'a CoupledSystem,
    pub stepper: Stepper,
    pub steps: usize,
    pub period: f64,
    pub forcing: Option<AssembledForcing>,
}

impl<'a> LinearFsi<'a> {
    pub fn new(sys: &'a CoupledSystem, period: f64, steps: usize, theta: f64) -> Result<Self> {
        if steps < 4 {
            return Err(Error::InvalidConfig(vec![format!("need at least 4 time steps per period, got {steps}")]));
        }
        let stepper = sys.stepper(period / steps as f64, theta)?;
        Ok(LinearFsi { sys, stepper, steps, period, forcing: None })
    }

    pub fn dt(&self) -> f64 {
        self.period / self.steps as f64
    }

    pub fn with_forcing(mut self, forcing: &PeriodicForcing) -> Result<Self> {
        self.set_forcing(forcing)?;
        Ok(self)
    }

    pub fn set_forcing(&mut self, forcing: &PeriodicForcing) -> Result<()> {
        if (forcing.period - self.period).abs() > 1e-14 * self.period {
            return Err(Error::InvalidConfig(vec![format!(
                "forcing period {} differs from the context period {}",
                forcing.period, self.period
            )]));
        }
        self.forcing = Some(assemble_forcing(self.sys, forcing, self.steps)?);
        Ok(())
    }

    /// All `steps + 1` primitive states from `y0`.
    pub fn march(&self, y0: &[f64], forced: bool) -> Result<Vec<Vec<f64>>> {
        let mut ys = Vec::with_capacity(self.steps + 1);
        ys.push(y0.to_vec());
        let zero = vec![0.0; self.sys.dim()];
        for n in 0..self.steps {
            let (r0, r1) = match (&self.forcing, forced) {
                (Some(f), true) => (&f.r[n], &f.r[(n + 1) % self.steps]),
                _ => (&zero, &zero),
            };
            let (y1, _) = self.stepper.step(&ys[n], r0, r1).map_err(|e| Error::StepFailure { step: n, source: Box::new(e) })?;
            ys.push(y1);
        }
        Ok(ys)
    }

    /// State-level period map.
    pub fn propagate_state(&self, s: &CoupledState, forced: bool) -> Result<CoupledState> {
        let y = self.sys.from_state(s)?;
        self.sys.to_state(&self.propagate(&y, forced)?)
    }
}

impl Evolution for LinearFsi<'_> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.sys.energy_inner(a, b)
    }

    fn propagate(&self, y0: &[f64], forced: bool) -> Result<Vec<f64>> {
        let mut y = y0.to_vec();
        let zero = vec![0.0; self.sys.dim()];
        for n in 0..self.steps {
            let (r0, r1) = match (&self.forcing, forced) {
                (Some(f), true) => (&f.r[n], &f.r[(n + 1) % self.steps]),
                _ => (&zero, &zero),
            };
            y = self.stepper.step(&y, r0, r1).map_err(|e| Error::StepFailure { step: n, source: Box::new(e) })?.0;
        }
        Ok(y)
    }

    fn start_vector(&self) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let y: Vec<f64> = (0..self.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        self.sys.from_state(&self.sys.to_state(&y)?)
    }
}

/// Dense monodromy matrix on an energy-orthonormal basis of the state space.
pub fn dense_monodromy(fsi: &LinearFsi) -> Result<Mat<f64>> {
    let g = fsi.sys.grid;
    if g.nx > 24 || g.nz > 12 {
        return Err(Error::InvalidConfig(vec![format!("dense monodromy limited to 24x12 grids, got {}x{}", g.nx, g.nz)]));
    }
    let red = crate::spectrum::reduce(fsi.sys)?;
    let y = &red.basis;
    let (big, dim) = (y.nrows(), y.ncols());
    let mut s = Mat::<f64>::zeros(dim, dim);
    let mut col = vec![0.0; big];
    for c in 0..dim {
        for j in 0..big {
            col[j] = y[(j, c)];
        }
        let m_sy = fsi.sys.mass().mul_vec(&fsi.propagate(&col, false)?);
        for r in 0..dim {
            s[(r, c)] = (0..big).map(|j| y[(j, r)] * m_sy[j]).sum();
        }
    }
    Ok(s)
}

/// Spectral radius of the discrete period map from the reduced spectrum:
/// the theta scheme multiplies each mode by `R(lambda dt)^N` exactly.
pub fn monodromy_radius_from_spectrum(sys: &CoupledSystem, period: f64, steps: usize, theta: f64) -> Result<f64> {
    let red = crate::spectrum::reduce(sys)?;
    let vals = dense::eigenvalues(&red.matrix)?;
    let dt = period / steps as f64;
    let one = C64::new(1.0, 0.0);
    Ok(vals
        .iter()
        .map(|l| ((one + *l * ((1.0 - theta) * dt)) / (one - *l * (theta * dt))).norm().powi(steps as i32))
        .fold(0.0, f64::max))
}

// ------------------------------------------------------------ trajectories

/// One period of the linear problem with every field rebuilt.
#[derive(Clone, Debug)]
pub struct PeriodicTrajectory {
    pub period: f64,
    pub times: Vec<f64>,
    pub states: Vec<CoupledState>,
    /// `Pi v + grad N_s(eta_t) + w + L_{Gamma_i,1}(omega1)`.
    pub velocity: Vec<VectorField>,
    pub pressure: Vec<ScalarField>,
    /// Energy norm of `s(T) - s(0)`.
    pub defect: f64,
    /// Primitive initial state, reusable as a Krylov guess.
    pub initial: Vec<f64>,
    pub krylov_iterations: usize,
    pub krylov_residual: f64,
}

impl PeriodicTrajectory {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// `max |u2 - eta_t|` on the beam over all nodes.
    pub fn interface_defect(&self) -> f64 {
        let mut m = 0.0f64;
        for (u, s) in self.velocity.iter().zip(&self.states) {
            let g = u.grid;
            for i in 0..g.nx {
                m = m.max((u.u2[g.zf(i, g.nz)] - s.eta_t.data[i]).abs());
            }
        }
        m
    }
}

#[derive(Clone, Debug)]
pub struct PeriodicOptions {
    pub steps: usize,
    pub theta: f64,
    pub gmres: GmresOptions,
    pub defect_tol: f64,
    pub check_spectrum: bool,
    pub arnoldi_steps: usize,
    pub margin: f64,
}

impl Default for PeriodicOptions {
    fn default() -> Self {
        PeriodicOptions {
            steps: 64,
            theta: 0.5,
            gmres: GmresOptions::default(),
            defect_tol: 1e-7,
            check_spectrum: false,
            arnoldi_steps: 20,
            margin: 1e-6,
        }
    }
}

/// Periodic solution of the linear system with full reconstruction of
/// velocity and pressure.
pub fn solve_periodic_linear_fsi(sys: &CoupledSystem, forcing: &PeriodicForcing, opts: &PeriodicOptions) -> Result<PeriodicTrajectory> {
    let fsi = LinearFsi::new(sys, forcing.period, opts.steps, opts.theta)?.with_forcing(forcing)?;
    if opts.check_spectrum {
        let c = check_spectral_criterion(&fsi, opts.arnoldi_steps, opts.margin)?;
        if !c.admissible {
            return Err(Error::Inconclusive(format!(
                "monodromy check not admissible: rho_max {:.6}, distance from 1 {:.3e}, conclusive {}",
                c.rho_max, c.distance_from_one, c.conclusive
            )));
        }
    }
    solve_linear_periodic(&fsi, &opts.gmres, opts.defect_tol, None)
}

/// Periodic solve and reconstruction on an assembled context.
pub fn solve_linear_periodic(
    fsi: &LinearFsi,
    gmres: &GmresOptions,
    defect_tol: f64,
    guess: Option<&[f64]>,
) -> Result<PeriodicTrajectory> {
    let forced = fsi.forcing.as_ref().ok_or_else(|| Error::Assembly("periodic context has no forcing".into()))?;
    let sol = solve_periodic_initial_condition(fsi, gmres, guess)?;
    let ys = fsi.march(&sol.z, true)?;
    reconstruct(fsi.sys, fsi, forced, &ys, &sol.krylov, defect_tol)
}

fn reconstruct(
    sys: &CoupledSystem,
    fsi: &LinearFsi,
    forced: &AssembledForcing,
    ys: &[Vec<f64>],
    krylov: &GmresResult,
    defect_tol: f64,
) -> Result<PeriodicTrajectory> {
    let steps = fsi.steps;
    let dt = fsi.dt();
    let diff: Vec<f64> = ys[steps].iter().zip(&ys[0]).map(|(a, b)| a - b).collect();
    let defect = sys.energy_norm(&diff);
    if defect > defect_tol {
        return Err(Error::PeriodicityDefect { defect, tol: defect_tol });
    }
    let states: Vec<CoupledState> = ys.iter().map(|y| sys.to_state(y)).collect::<Result<_>>()?;
    let ns: Vec<ScalarField> = states[..steps].iter().map(|s| sys.ops.ns_operator(&s.eta_t.data)).collect::<Result<_>>()?;
    let zero_e = Edges::zeros(&sys.grid);
    let mut velocity = Vec::with_capacity(steps + 1);
    let mut pressure = Vec::with_capacity(steps + 1);
    for (n, s) in states.iter().enumerate() {
        let k = n % steps;
        let mut v = s.pv.clone();
        v.axpy(1.0, &sys.ops.ns_gradient(&s.eta_t.data)?);
        let nv = sys.ops.nv_operator(&v, &zero_e)?;
        let np = sys.ops.leray.np_operator(&forced.fluid[k])?;
        let (a, b) = (&ns[(k + 1) % steps], &ns[(k + steps - 1) % steps]);
        let mut q = ScalarField::zeros(sys.grid, Stagger::Cell);
        for c in 0..q.data.len() {
            q.data[c] = -(a.data[c] - b.data[c]) / (2.0 * dt) + nv.data[c] + np.data[c] + forced.lift_p[k].data[c];
        }
        v.axpy(1.0, &forced.lift_u[k]);
        velocity.push(v);
        pressure.push(q);
    }
    Ok(PeriodicTrajectory {
        period: fsi.period,
        times: (0..=steps).map(|n| n as f64 * dt).collect(),
        states,
        velocity,
        pressure,
        defect,
        initial: ys[0].clone(),
        krylov_iterations: krylov.iterations,
        krylov_residual: krylov.residual,
    })
}

// ------------------------------------------------------------ norms

/// Spatial part of the solution-norm proxy at one time node.
pub fn node_norm(sys: &CoupledSystem, u: &VectorField, p: &ScalarField, eta: &[f64], eta_t: &[f64]) -> f64 {
    let form = sys.ops.form();
    let zero = Edges::zeros(&sys.grid);
    let lap_u = sys.ops.viscous_term(u, &zero).scaled(1.0 / sys.params.nu);
    let gp = crate::grid::gradient(p).map(|g| g.norm()).unwrap_or(0.0);
    u.norm()
        + form.energy(u, &zero).max(0.0).sqrt()
        + lap_u.norm()
        + p.norm()
        + gp
        + sys.beam.h2_norm(eta)
        + sys.beam.h2_norm(eta_t)
}

/// Solution-norm proxy: sup in time of spatial norms of the fields and
/// of `u_t`, `eta_tt`, plus a half-order difference quotient in time.
pub fn solution_norm(
    sys: &CoupledSystem,
    dt: f64,
    u: &[VectorField],
    p: &[ScalarField],
    eta: &[BeamField],
    eta_t: &[BeamField],
) -> f64 {
    let steps = u.len();
    let mut sup = 0.0f64;
    let mut holder = 0.0f64;
    for n in 0..steps {
        let m = (n + 1) % steps;
        let prev = (n + steps - 1) % steps;
        let u_t = u[m].sub(&u[prev]).scaled(0.5 / dt);
        let eta_tt: Vec<f64> = eta_t[m].data.iter().zip(&eta_t[prev].data).map(|(a, b)| (a - b) * 0.5 / dt).collect();
        let here = node_norm(sys, &u[n], &p[n], &eta[n].data, &eta_t[n].data)
            + u_t.norm()
            + sys.beam.l2_inner(&eta_tt, &eta_tt).max(0.0).sqrt();
        sup = sup.max(here);
        let du = u[m].sub(&u[n]);
        let dp = ScalarField { data: p[m].data.iter().zip(&p[n].data).map(|(a, b)| a - b).collect(), ..p[n].clone() };
        let de: Vec<f64> = eta[m].data.iter().zip(&eta[n].data).map(|(a, b)| a - b).collect();
        let det: Vec<f64> = eta_t[m].data.iter().zip(&eta_t[n].data).map(|(a, b)| a - b).collect();
        holder = holder.max(node_norm(sys, &du, &dp, &de, &det) / dt.sqrt());
    }
    sup + holder
}

pub fn trajectory_norm(sys: &CoupledSystem, traj: &PeriodicTrajectory) -> f64 {
    let n = traj.steps();
    let eta: Vec<BeamField> = traj.states[..n].iter().map(|s| s.eta.clone()).collect();
    let eta_t: Vec<BeamField> = traj.states[..n].iter().map(|s| s.eta_t.clone()).collect();
    solution_norm(sys, traj.period / n as f64, &traj.velocity[..n], &traj.pressure[..n], &eta, &eta_t)
}

/// Largest ratio of solution norm to data norm over the probes; zero
/// probes are skipped.
pub fn empirical_linear_constant(sys: &CoupledSystem, probes: &[PeriodicForcing], opts: &PeriodicOptions) -> Result<f64> {
    let mut c = 0.0f64;
    for f in probes {
        let d = f.data_norm(&sys.grid, opts.steps);
        if d == 0.0 {
            continue;
        }
        let traj = solve_periodic_linear_fsi(sys, f, opts)?;
        c = c.max(trajectory_norm(sys, &traj) / d);
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

    fn tight() -> GmresOptions {
        GmresOptions { tol: 1e-12, ..Default::default() }
    }

    #[test]
    fn fourier_series_derivative() {
        let s = FourierSeries { mean: 0.3, cos: vec![1.0, -0.5], sin: vec![0.25] };
        let (t, h) = (0.37, 1e-6);
        let fd = (s.eval(t + h, 2.0) - s.eval(t - h, 2.0)) / (2.0 * h);
        assert!((fd - s.derivative(t, 2.0)).abs() < 1e-8);
        assert!((s.eval(0.1, 2.0) - s.eval(2.1, 2.0)).abs() < 1e-14);
    }

    #[test]
    fn scalar_surrogate_monodromy() {
        for steps in [16, 32, 64] {
            let e = DiagonalSurrogate::scalar(-1.0, FourierSeries::default(), 1.0, steps);
            let y = propagate_period(&e, &[1.0], false).unwrap()[0];
            let dt = 1.0 / steps as f64;
            assert!((y - (-1.0f64).exp()).abs() <= dt * dt / 12.0 * 1.01, "{steps}");
            let c = check_spectral_criterion(&e, 5, 1e-6).unwrap();
            assert!(c.admissible && (c.rho_max - y).abs() < 1e-14);
        }
    }

    #[test]
    fn scalar_surrogate_periodic_solution() {
        // y' = -y + cos(2 pi t / T): y(0) = 1 / (1 + w^2)
        for (period, steps) in [(1.0, 32), (1.0, 64), (3.0, 40)] {
            let e = DiagonalSurrogate::scalar(-1.0, FourierSeries::cosine(1.0), period, steps);
            let s = solve_periodic_initial_condition(&e, &tight(), None).unwrap();
            let w = 2.0 * PI / period;
            let dt = period / steps as f64;
            assert!((s.z[0] - 1.0 / (1.0 + w * w)).abs() <= 10.0 * dt * dt);
            assert!(s.defect < 1e-12);
        }
        let e = DiagonalSurrogate::scalar(-1.0, FourierSeries::default(), 1.0, 16);
        assert_eq!(solve_periodic_initial_condition(&e, &tight(), None).unwrap().z, vec![0.0]);
    }

    #[test]
    fn zero_eigenvalue_is_detected() {
        let e = DiagonalSurrogate {
            rates: vec![-1.0, 0.0],
            forcing: vec![FourierSeries::default(); 2],
            period: 1.0,
            steps: 16,
            theta: 0.5,
        };
        let c = check_spectral_criterion(&e, 2, 1e-6).unwrap();
        assert!(c.rho_max >= 1.0 - 1e-14);
        assert!(!c.admissible);
    }

    #[test]
    fn unforced_period_map_contracts() {
        let sys = system(12, 6);
        let fsi = LinearFsi::new(&sys, 1.0, 16, 0.5).unwrap();
        let zero = vec![0.0; sys.dim()];
        assert!(fsi.propagate(&zero, true).unwrap().iter().all(|v| *v == 0.0));
        let z = fsi.start_vector().unwrap();
        let sz = fsi.propagate(&z, false).unwrap();
        assert!(fsi.norm(&sz) < fsi.norm(&z));
    }

    #[test]
    fn arnoldi_matches_dense_monodromy_and_reduced_spectrum() {
        let sys = system(12, 6);
        let fsi = LinearFsi::new(&sys, 1.0, 16, 0.5).unwrap();
        let c = check_spectral_criterion(&fsi, 20, 1e-6).unwrap();
        assert!(c.admissible && c.rho_max < 1.0);
        let s = dense_monodromy(&fsi).unwrap();
        let rho_dense = dense::eigenvalues(&s).unwrap().iter().map(|v| v.norm()).fold(0.0, f64::max);
        let rho_spec = monodromy_radius_from_spectrum(&sys, 1.0, 16, 0.5).unwrap();
        assert!((rho_dense - rho_spec).abs() < 1e-9 * rho_spec, "{rho_dense} {rho_spec}");
        assert!((c.rho_max - rho_dense).abs() < 1e-6, "{} {rho_dense}", c.rho_max);
    }

    #[test]
    fn periodic_solution_matches_dense_oracle() {
        let sys = system(12, 6);
        let forcing = PeriodicForcing::outflow_sine(1.0, 0.2);
        let fsi = LinearFsi::new(&sys, 1.0, 16, 0.5).unwrap().with_forcing(&forcing).unwrap();
        let sol = solve_periodic_initial_condition(&fsi, &tight(), None).unwrap();
        assert!(sol.defect <= 1e-10 * sol.rhs_norm);
        // dense: (I - S) xi = Y^T M b in the reduced basis
        let red = crate::spectrum::reduce(&sys).unwrap();
        let s = dense_monodromy(&fsi).unwrap();
        let b = fsi.propagate(&vec![0.0; sys.dim()], true).unwrap();
        let mb = sys.mass().mul_vec(&b);
        let dim = s.nrows();
        let rhs: Vec<f64> = (0..dim).map(|c| (0..sys.dim()).map(|j| red.basis[(j, c)] * mb[j]).sum()).collect();
        let i_s = Mat::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { 0.0 } - s[(i, j)]);
        let xi = dense::solve(&i_s, &rhs);
        let z: Vec<f64> = (0..sys.dim()).map(|j| (0..dim).map(|c| red.basis[(j, c)] * xi[c]).sum()).collect();
        let d: Vec<f64> = z.iter().zip(&sol.z).map(|(a, b)| a - b).collect();
        assert!(sys.energy_norm(&d) <= 1e-8 * sys.energy_norm(&z));
        // another start converges to the same fixed point
        let other = solve_periodic_initial_condition(&fsi, &tight(), Some(&fsi.start_vector().unwrap())).unwrap();
        let d: Vec<f64> = other.z.iter().zip(&sol.z).map(|(a, b)| a - b).collect();
        assert!(sys.energy_norm(&d) <= 1e-9);
    }

    #[test]
    fn trajectory_properties() {
        let sys = system(12, 6);
        let opts = PeriodicOptions { steps: 16, gmres: tight(), ..Default::default() };
        let zero = solve_periodic_linear_fsi(&sys, &PeriodicForcing::zero(1.0), &opts).unwrap();
        assert!(zero.velocity.iter().all(|u| u.max_abs() == 0.0));
        assert!(zero.pressure.iter().all(|p| p.data.iter().all(|v| *v == 0.0)));

        let mut f = PeriodicForcing::outflow_sine(1.0, 0.1);
        f.omega1_amplitude = 0.5;
        f.omega1 = FourierSeries { mean: 0.0, cos: vec![0.3], sin: vec![0.0, 0.2] };
        let a = solve_periodic_linear_fsi(&sys, &f, &opts).unwrap();
        let b = solve_periodic_linear_fsi(&sys, &f.scaled(2.0), &opts).unwrap();
        let mut worst = 0.0f64;
        for (ua, ub) in a.velocity.iter().zip(&b.velocity) {
            worst = worst.max(ub.sub(&ua.scaled(2.0)).max_abs() / ua.max_abs().max(1e-300));
        }
        assert!(worst <= 1e-8, "{worst}");
        assert!(a.interface_defect() <= 1e-12);
        assert!(a.defect <= 1e-7);
        for (n, u) in a.velocity.iter().enumerate() {
            // inflow trace reproduces omega1
            let g = u.grid;
            let s1 = f.omega1.eval(a.times[n], 1.0);
            for j in 0..g.nz {
                let want = 0.5 * s1 * inflow_shape(g.zc(j));
                assert!((u.u1[g.xf(0, j)] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn reconstructed_pressure_tracks_step_pressure() {
        let sys = system(12, 6);
        let f = PeriodicForcing::outflow_sine(1.0, 0.1);
        let opts = PeriodicOptions { steps: 32, gmres: tight(), ..Default::default() };
        let traj = solve_periodic_linear_fsi(&sys, &f, &opts).unwrap();
        // the Crank-Nicolson pressure is the midpoint value
        let fsi = LinearFsi::new(&sys, 1.0, 32, 0.5).unwrap().with_forcing(&f).unwrap();
        let forced = fsi.forcing.as_ref().unwrap();
        let y0 = sys.from_state(&traj.states[3]).unwrap();
        let (_, p) = fsi.stepper.step(&y0, &forced.r[3], &forced.r[4]).unwrap();
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for c in 0..p.len() {
            let mid = 0.5 * (traj.pressure[3].data[c] + traj.pressure[4].data[c]) - 0.5 * (forced.lift_p[3].data[c] + forced.lift_p[4].data[c]);
            err = err.max((mid - p[c]).abs());
            scale = scale.max(p[c].abs());
        }
        assert!(err <= 0.05 * scale, "{err} {scale}");
    }

    #[test]
    fn time_step_self_convergence() {
        let sys = system(12, 6);
        let f = PeriodicForcing::outflow_sine(1.0, 0.1);
        let z = |steps: usize| {
            let fsi = LinearFsi::new(&sys, 1.0, steps, 0.5).unwrap().with_forcing(&f).unwrap();
            solve_periodic_initial_condition(&fsi, &tight(), None).unwrap().z
        };
        let (a, b, c) = (z(16), z(32), z(64));
        let d = |x: &[f64], y: &[f64]| sys.energy_norm(&x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>());
        let order = (d(&a, &b) / d(&b, &c)).log2();
        assert!(order >= 1.8, "{order}");
    }

    #[test]
    fn linear_constant_is_finite() {
        let sys = system(12, 6);
        let opts = PeriodicOptions { steps: 16, gmres: tight(), ..Default::default() };
        let probes = [PeriodicForcing::zero(1.0), PeriodicForcing::outflow_sine(1.0, 0.1)];
        let c = empirical_linear_constant(&sys, &probes, &opts).unwrap();
        assert!(c.is_finite() && c > 0.0);
    }
}
