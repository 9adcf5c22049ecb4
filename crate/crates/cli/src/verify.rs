//! The invariant suite run by `pfsi verify` on the configured problem.

use crate::config::SolverConfig;
use crate::output::Manifest;
use crate::{Failure, RunResult};
use periodic_fsi::coupled::CoupledSystem;
use periodic_fsi::grid::{divergence, BeamField, Grid2D, VectorField};
use periodic_fsi::leray::{dirichlet_normal_max, LerayProjector};
use periodic_fsi::nonlinear::{quadratic_ratios, random_transformed, solve_periodic_fsi, transformed_residuals};
use periodic_fsi::periodic::{check_spectral_criterion, solve_periodic_linear_fsi, LinearFsi, PeriodicForcing};
use periodic_fsi::spectrum::rightmost_eigenvalues;
use periodic_fsi::stokes::{beam_trace_error, InflowProfile, Manufactured, RightBoundary, StokesOps, StokesSolver, VelocityData};
use periodic_fsi::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub values: Vec<(&'static str, f64)>,
    pub error: Option<String>,
}

impl Check {
    fn line(&self) -> String {
        let v: Vec<String> = self.values.iter().map(|(k, x)| format!("{k}={x:.4e}")).collect();
        let mut s = format!("{:<20} {} {}", self.name, if self.pass { "PASS" } else { "FAIL" }, v.join(" "));
        if let Some(e) = &self.error {
            s.push_str(&format!(" error: {e}"));
        }
        s
    }
}

type Measured = Result<Vec<(&'static str, f64, bool)>>;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn leray(cfg: &SolverConfig, g: Grid2D) -> Measured {
    let p = LerayProjector::new(g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut idem, mut orth, mut div, mut normal) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cfg.verify.random_fields {
        let mut u = VectorField::zeros(g);
        u.u1.iter_mut().chain(u.u2.iter_mut()).for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let n = u.norm();
        let pu = p.apply(&u)?;
        idem = idem.max(p.apply(&pu)?.sub(&pu).norm() / n);
        orth = orth.max(pu.inner(&u.sub(&pu))?.abs() / (n * n));
        div = div.max(divergence(&pu).norm() * g.dx / n);
        normal = normal.max(dirichlet_normal_max(&pu) / u.max_abs());
    }
    let tol = cfg.tolerances.elliptic;
    Ok(vec![
        ("idempotence", idem, idem <= tol),
        ("orthogonality", orth, orth <= tol),
        ("divergence", div, div <= tol),
        ("normal_trace", normal, normal <= tol),
    ])
}

fn stokes_order(cfg: &SolverConfig, g: Grid2D) -> Measured {
    let err = |g: Grid2D| -> Result<f64> {
        let m = Manufactured { len: g.length, lambda: 0.0, nu: cfg.fluid.nu, c: 0.3 };
        let sol = StokesSolver::new(g, RightBoundary::Outflow, 0.0, cfg.fluid.nu)?.solve(&m.forcing(g), &VelocityData::zeros(&g))?;
        Ok(sol.u.sub(&m.velocity(g)).norm())
    };
    let (nx, nz) = (2 * (g.nx / 2).max(4), 2 * (g.nz / 2).max(4));
    let e1 = err(Grid2D::new(nx / 2, nz / 2, g.length)?)?;
    let e2 = err(Grid2D::new(nx, nz, g.length)?)?;
    let order = (e1 / e2).log2();
    Ok(vec![("order", order, order >= 1.8), ("error", e2, true)])
}

fn liftings(cfg: &SolverConfig, g: Grid2D) -> Measured {
    let ops = StokesOps::new(g, cfg.fluid.nu)?;
    let tol = cfg.tolerances.elliptic;
    let len = g.length;
    let gb = BeamField::from_fn(g, |x| (x * (len - x)).powi(2));
    let ls = ops.lift_gamma_s(&gb)?;
    let trace_s = beam_trace_error(&ls.u, &gb.data) / max_abs(&gb.data);
    let div_s = max_abs(&divergence(&ls.u).data) * g.dx / ls.u.max_abs();
    let midline = ls.outflow_u2_max / gb.norm();
    let omega = InflowProfile::from_fn(&g, |z| (z * (1.0 - z)).powi(2), |_| 0.0);
    let li = ops.lift_gamma_i(&omega)?;
    let trace_i = (0..g.nz)
        .fold(0.0f64, |m, j| m.max((li.u.u1[g.xf(0, j)] - omega.u1[j]).abs()))
        .max(beam_trace_error(&li.u, &vec![0.0; g.nx]))
        / max_abs(&omega.u1);
    let div_i = max_abs(&divergence(&li.u).data) * g.dx / li.u.max_abs();
    Ok(vec![
        ("trace_beam", trace_s, trace_s <= tol),
        ("trace_inflow", trace_i, trace_i <= tol),
        ("div_beam", div_s, div_s <= tol),
        ("div_inflow", div_i, div_i <= tol),
        ("midline", midline, midline <= tol),
        ("flux", li.flux_compensation, li.flux_compensation <= 1e-2 * tol),
    ])
}

fn equivalence(cfg: &SolverConfig, g: Grid2D) -> Measured {
    let ops = StokesOps::new(g, cfg.fluid.nu)?;
    let f = VectorField::from_fn(g, |x, z| (3.1 * x + 1.7 * z).sin(), |x, z| (5.0 * x * z).cos());
    let len = g.length;
    let gb = BeamField::from_fn(g, |x| (x * (len - x)).powi(2));
    let r = ops.stokes_projection_equivalence(1.0, &f, &gb)?;
    Ok(vec![("velocity", r.velocity_discrepancy, r.velocity_discrepancy <= 100.0 * cfg.tolerances.elliptic)])
}

fn spectrum(cfg: &SolverConfig, sys: &CoupledSystem) -> Measured {
    let rep = rightmost_eigenvalues(sys, cfg.spectrum.eigenvalues)?;
    let re = rep.max_real_part();
    let energy = rep.pairs.iter().map(|p| p.energy_residual).fold(0.0, f64::max);
    Ok(vec![
        ("max_real_part", re, re < -1e-6),
        ("sigma_min", rep.min_singular_value, rep.min_singular_value > 1e-8),
        ("energy_residual", energy, energy <= 1e-4),
    ])
}

fn monodromy(cfg: &SolverConfig, sys: &CoupledSystem) -> Measured {
    let d = &cfg.discretization;
    let fsi = LinearFsi::new(sys, cfg.forcing.period, d.steps, d.theta)?;
    let c = check_spectral_criterion(&fsi, cfg.spectrum.arnoldi_steps, cfg.spectrum.margin)?;
    Ok(vec![("rho_max", c.rho_max, c.rho_max < 1.0 - 1e-4 && c.admissible)])
}

fn forcing_or_default(cfg: &SolverConfig) -> PeriodicForcing {
    let f = cfg.forcing();
    if f.boundary_is_zero() {
        PeriodicForcing::outflow_sine(cfg.forcing.period, 1e-3)
    } else {
        f
    }
}

fn periodic_linear(cfg: &SolverConfig, sys: &CoupledSystem) -> Measured {
    let f = forcing_or_default(cfg);
    let opts = cfg.periodic_options();
    let a = solve_periodic_linear_fsi(sys, &f, &opts)?;
    let b = solve_periodic_linear_fsi(sys, &f.scaled(2.0), &opts)?;
    let lin = a
        .velocity
        .iter()
        .zip(&b.velocity)
        .map(|(x, y)| y.sub(&x.scaled(2.0)).norm() / x.norm().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(vec![("defect", a.defect, a.defect <= cfg.tolerances.defect), ("linearity", lin, lin <= 1e-8)])
}

fn nonlinear_terms(cfg: &SolverConfig, sys: &CoupledSystem) -> Measured {
    let x = random_transformed(sys, cfg.forcing.period, 16, 0.5, cfg.seed);
    let r: Vec<[f64; 4]> = [1e-1, 1e-2, 1e-3].iter().map(|e| quadratic_ratios(sys, &x, *e)).collect::<Result<_>>()?;
    let names = ["spread_G", "spread_w", "spread_Theta", "spread_Psi"];
    Ok(names
        .into_iter()
        .enumerate()
        .map(|(c, name)| {
            let (lo, hi) = r.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v[c]), b.max(v[c])));
            (name, hi / lo, lo > 0.0 && hi <= 1.2 * lo)
        })
        .collect())
}

fn nonlinear_solve(cfg: &SolverConfig, sys: &CoupledSystem) -> Measured {
    let f = forcing_or_default(cfg);
    let opts = cfg.nonlinear_options();
    let s = solve_periodic_fsi(sys, &f, &opts)?;
    let rate = s.history.iter().rev().take(3).filter_map(|r| r.rate).fold(0.0, f64::max);
    let zero = solve_periodic_fsi(sys, &PeriodicForcing::zero(cfg.forcing.period), &opts)?;
    let zero_ok = zero.converged && zero.iterations() <= 1 && zero.solution.u.iter().all(|u| u.max_abs() == 0.0);
    let r = transformed_residuals(sys, &s.solution, &f)?;
    let interface = s.trajectory.interface_defect();
    Ok(vec![
        ("iterations", s.iterations() as f64, s.converged),
        ("rate", rate, rate < 0.9),
        ("defect", s.trajectory.defect, s.trajectory.defect <= cfg.tolerances.defect),
        ("min_one_plus_eta", s.solution.min_one_plus_eta(), s.solution.min_one_plus_eta() > 0.5),
        ("zero_iterations", zero.iterations() as f64, zero_ok),
        ("interface", interface, interface <= 1e-6),
        ("residual_divergence", r.divergence, r.divergence <= 10.0 * cfg.tolerances.picard),
    ])
}

pub fn checks(cfg: &SolverConfig) -> Result<Vec<Check>> {
    let g = cfg.grid()?;
    let sys = cfg.system()?;
    let mut out = Vec::new();
    let mut push = |name: &'static str, r: Measured| {
        out.push(match r {
            Ok(v) => Check {
                name,
                pass: v.iter().all(|x| x.2),
                values: v.iter().map(|x| (x.0, x.1)).collect(),
                error: None,
            },
            Err(e) => Check { name, pass: false, values: vec![], error: Some(format!("[{}] {e}", e.class())) },
        })
    };
    push("leray", leray(cfg, g));
    push("stokes_order", stokes_order(cfg, g));
    push("liftings", liftings(cfg, g));
    push("equivalence", equivalence(cfg, g));
    push("spectrum", spectrum(cfg, &sys));
    push("monodromy", monodromy(cfg, &sys));
    push("periodic_linear", periodic_linear(cfg, &sys));
    push("nonlinear_terms", nonlinear_terms(cfg, &sys));
    push("nonlinear_solve", nonlinear_solve(cfg, &sys));
    Ok(out)
}

pub fn run(cfg: &SolverConfig, out: &std::path::Path, m: &mut Manifest) -> RunResult {
    let checks = checks(cfg)?;
    let mut report = String::new();
    for c in &checks {
        report.push_str(&c.line());
        report.push('\n');
        m.margin(&format!("{}.pass", c.name), c.pass);
        for (k, v) in &c.values {
            m.margin(&format!("{}.{k}", c.name), *v);
        }
    }
    std::fs::write(out.join("verify.txt"), &report).map_err(Error::Io)?;
    m.files.push("verify.txt".into());
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new("verification-failed", 3, format!("failed checks: {}", failed.join(", "))))
    }
}
