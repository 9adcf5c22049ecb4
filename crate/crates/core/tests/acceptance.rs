//! Acceptance suite: one test per criterion on the default configuration
//! (L = 2, nu = 0.1, alpha = 1, beta = 0, gamma = 0.5, 48x24, T = 1, N_t = 64).
//!
//! Each test prints a single `criterion N: PASS|FAIL ...` line; run with
//! `--nocapture` to see them.

use periodic_fsi::beam::BeamParams;
use periodic_fsi::coupled::CoupledSystem;
use periodic_fsi::grid::{divergence, BeamField, Grid2D, VectorField};
use periodic_fsi::krylov::GmresOptions;
use periodic_fsi::leray::{dirichlet_normal_max, LerayProjector};
use periodic_fsi::nonlinear::{
    lipschitz_constant, quadratic_ratios, random_transformed, solve_periodic_fsi, transformed_residuals,
    NonlinearOptions, NonlinearSolution, TransformedSolution,
};
use periodic_fsi::periodic::{
    check_spectral_criterion, monodromy_radius_from_spectrum, propagate_period, solve_periodic_initial_condition,
    solve_periodic_linear_fsi, DiagonalSurrogate, FourierSeries, LinearFsi, PeriodicForcing, PeriodicOptions,
};
use periodic_fsi::spectrum::rightmost_eigenvalues;
use periodic_fsi::stokes::{beam_trace_error, InflowProfile, RightBoundary, StokesOps, StokesSolver, VelocityData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::time::Instant;

const L: f64 = 2.0;
const NU: f64 = 0.1;
const T: f64 = 1.0;
const NT: usize = 64;

fn grid() -> Grid2D {
    Grid2D::new(48, 24, L).unwrap()
}

fn system() -> CoupledSystem {
    CoupledSystem::new(grid(), BeamParams::new(1.0, 0.0, 0.5, NU).unwrap()).unwrap()
}

fn report(n: usize, checks: &[(&str, bool, String)], start: Instant) {
    let pass = checks.iter().all(|c| c.1);
    let detail: Vec<String> = checks.iter().map(|(name, ok, v)| format!("{name}={v}{}", if *ok { "" } else { "(!)" })).collect();
    println!(
        "criterion {n}: {} [{:.1}s] {}",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64(),
        detail.join(" ")
    );
    assert!(pass, "criterion {n} failed: {detail:?}");
}

fn random_field(g: Grid2D, rng: &mut ChaCha8Rng) -> VectorField {
    let mut v = VectorField::zeros(g);
    v.u1.iter_mut().chain(v.u2.iter_mut()).for_each(|x| *x = rng.gen_range(-1.0..1.0));
    v
}

#[test]
fn criterion_01_leray_suite() {
    let start = Instant::now();
    let g = grid();
    let p = LerayProjector::new(g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut idem, mut orth, mut div, mut normal) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let u = random_field(g, &mut rng);
        let n = u.norm();
        let pu = p.apply(&u).unwrap();
        idem = idem.max(p.apply(&pu).unwrap().sub(&pu).norm() / n);
        orth = orth.max(pu.inner(&u.sub(&pu)).unwrap().abs() / (n * n));
        // divergence relative to the largest difference quotient of u
        div = div.max(divergence(&pu).norm() * g.dx / n);
        normal = normal.max(dirichlet_normal_max(&pu) / u.max_abs());
    }
    let tol = 1e-8;
    report(
        1,
        &[
            ("idempotence", idem <= tol, format!("{idem:.2e}")),
            ("orthogonality", orth <= tol, format!("{orth:.2e}")),
            ("divergence", div <= tol, format!("{div:.2e}")),
            ("normal_trace", normal <= tol, format!("{normal:.2e}")),
        ],
        start,
    );
}

/// `psi = sin^2(pi x / L) sin^2(pi z)`, `p = c sin(pi x / L) cos(pi z)`:
/// satisfies the wall, beam, inflow and outflow conditions with zero data.
fn stokes_error(nz: usize) -> f64 {
    let g = Grid2D::new(2 * nz, nz, L).unwrap();
    let (a, b, c) = (PI / L, PI, 0.4);
    let u1 = |x: f64, z: f64| b * (a * x).sin().powi(2) * (2.0 * b * z).sin();
    let u2 = |x: f64, z: f64| -a * (2.0 * a * x).sin() * (b * z).sin().powi(2);
    let f1 = move |x: f64, z: f64| {
        let lap = b * (2.0 * a * a * (2.0 * a * x).cos() * (2.0 * b * z).sin() - 4.0 * b * b * (a * x).sin().powi(2) * (2.0 * b * z).sin());
        -NU * lap + c * a * (a * x).cos() * (b * z).cos()
    };
    let f2 = move |x: f64, z: f64| {
        let lap = -a * (-4.0 * a * a * (2.0 * a * x).sin() * (b * z).sin().powi(2) + 2.0 * b * b * (2.0 * a * x).sin() * (2.0 * b * z).cos());
        -NU * lap - c * b * (a * x).sin() * (b * z).sin()
    };
    let s = StokesSolver::new(g, RightBoundary::Outflow, 0.0, NU).unwrap();
    let sol = s.solve(&VectorField::from_fn(g, f1, f2), &VelocityData::zeros(&g)).unwrap();
    sol.u.sub(&VectorField::from_fn(g, u1, u2)).norm()
}

#[test]
fn criterion_02_stokes_manufactured_order() {
    let start = Instant::now();
    let (e1, e2) = (stokes_error(16), stokes_error(32));
    let order = (e1 / e2).log2();
    report(2, &[("order", order >= 1.8, format!("{order:.3}")), ("l2_error_64x32", true, format!("{e2:.3e}"))], start);
}

#[test]
fn criterion_03_lifting_contracts() {
    let start = Instant::now();
    let g = grid();
    let ops = StokesOps::new(g, NU).unwrap();
    let gb = BeamField::from_fn(g, |x| (x * (L - x)).powi(2));
    let gn = gb.norm();
    let ls = ops.lift_gamma_s(&gb).unwrap();
    let trace_s = beam_trace_error(&ls.u, &gb.data) / gb.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let div_s = divergence(&ls.u).data.iter().fold(0.0f64, |m, v| m.max(v.abs())) * g.dx / ls.u.max_abs();
    let midline = ls.outflow_u2_max / gn;

    let omega = InflowProfile::from_fn(&g, |z| (z * (1.0 - z)).powi(2), |_| 0.0);
    let li = ops.lift_gamma_i(&omega).unwrap();
    let trace_i = (0..g.nz).fold(0.0f64, |m, j| m.max((li.u.u1[g.xf(0, j)] - omega.u1[j]).abs()))
        .max(beam_trace_error(&li.u, &vec![0.0; g.nx]))
        / omega.u1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let div_i = divergence(&li.u).data.iter().fold(0.0f64, |m, v| m.max(v.abs())) * g.dx / li.u.max_abs();
    let flux = li.flux_compensation;
    report(
        3,
        &[
            ("trace_beam", trace_s <= 1e-8, format!("{trace_s:.2e}")),
            ("trace_inflow", trace_i <= 1e-8, format!("{trace_i:.2e}")),
            ("div_beam", div_s <= 1e-8, format!("{div_s:.2e}")),
            ("div_inflow", div_i <= 1e-8, format!("{div_i:.2e}")),
            ("midline", midline <= 1e-8, format!("{midline:.2e}")),
            ("flux", flux <= 1e-10, format!("{flux:.2e}")),
        ],
        start,
    );
}

#[test]
fn criterion_04_projection_equivalence() {
    let start = Instant::now();
    let g = grid();
    let ops = StokesOps::new(g, NU).unwrap();
    let f = VectorField::from_fn(g, |x, z| (3.1 * x + 1.7 * z).sin(), |x, z| (5.0 * x * z).cos());
    let gb = BeamField::from_fn(g, |x| (x * (L - x)).powi(2));
    let mut checks = Vec::new();
    for lambda in [0.0, 1.0] {
        let r = ops.stokes_projection_equivalence(lambda, &f, &gb).unwrap();
        checks.push(("velocity", r.velocity_discrepancy <= 1e-6, format!("{:.2e}@lambda={lambda}", r.velocity_discrepancy)));
    }
    report(4, &checks, start);
}

#[test]
fn criterion_05_spectral_check() {
    let start = Instant::now();
    let sys = system();
    let rep = rightmost_eigenvalues(&sys, 20).unwrap();
    let re = rep.max_real_part();
    let energy = rep.pairs.iter().map(|p| p.energy_residual).fold(0.0, f64::max);
    report(
        5,
        &[
            ("max_re", re < -1e-6, format!("{re:.4e}")),
            ("sigma_min", rep.min_singular_value > 1e-8, format!("{:.4e}", rep.min_singular_value)),
            ("energy_residual", energy <= 1e-4, format!("{energy:.2e}")),
        ],
        start,
    );
}

#[test]
fn criterion_06_monodromy() {
    let start = Instant::now();
    let sys = system();
    let fsi = LinearFsi::new(&sys, T, NT, 0.5).unwrap();
    let c = check_spectral_criterion(&fsi, 20, 1e-6).unwrap();
    let oracle = monodromy_radius_from_spectrum(&sys, T, NT, 0.5).unwrap();
    let agree = (c.rho_max - oracle).abs() / oracle;
    let dt = T / NT as f64;
    let s = DiagonalSurrogate::scalar(-1.0, FourierSeries::default(), T, NT);
    let scalar = propagate_period(&s, &[1.0], false).unwrap()[0];
    let scalar_err = (scalar - (-T).exp()).abs();
    report(
        6,
        &[
            ("rho_max", c.rho_max < 1.0 - 1e-4 && c.conclusive && c.admissible, format!("{:.6}", c.rho_max)),
            ("oracle_agreement", agree <= 1e-6, format!("{agree:.2e}")),
            ("scalar_error", scalar_err <= dt * dt, format!("{scalar_err:.2e}")),
        ],
        start,
    );
}

#[test]
fn criterion_07_periodic_linear_solver() {
    let start = Instant::now();
    let sys = system();
    let mut forcing = PeriodicForcing::outflow_sine(T, 0.1);
    forcing.omega1_amplitude = 0.5;
    forcing.omega1 = FourierSeries { mean: 0.0, cos: vec![0.5], sin: vec![0.0, 0.25] };
    let opts = PeriodicOptions { steps: NT, check_spectrum: true, ..Default::default() };
    let a = solve_periodic_linear_fsi(&sys, &forcing, &opts).unwrap();
    let b = solve_periodic_linear_fsi(&sys, &forcing.scaled(2.0), &opts).unwrap();
    let lin = a
        .velocity
        .iter()
        .zip(&b.velocity)
        .map(|(x, y)| y.sub(&x.scaled(2.0)).norm() / x.norm().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);

    let dt = T / NT as f64;
    let w = 2.0 * PI / T;
    let s = DiagonalSurrogate::scalar(-1.0, FourierSeries::cosine(1.0), T, NT);
    let z = solve_periodic_initial_condition(&s, &GmresOptions { tol: 1e-13, ..Default::default() }, None).unwrap().z[0];
    let scalar_err = (z - 1.0 / (1.0 + w * w)).abs();

    let tight = GmresOptions { tol: 1e-11, ..Default::default() };
    let ic = |steps: usize| {
        let f = LinearFsi::new(&sys, T, steps, 0.5).unwrap().with_forcing(&forcing).unwrap();
        solve_periodic_initial_condition(&f, &tight, None).unwrap().z
    };
    let (z1, z2, z3) = (ic(16), ic(32), ic(64));
    let d = |x: &[f64], y: &[f64]| sys.energy_norm(&x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>());
    let order = (d(&z1, &z2) / d(&z2, &z3)).log2();
    report(
        7,
        &[
            ("defect", a.defect <= 1e-7, format!("{:.2e}", a.defect)),
            ("linearity", lin <= 1e-8, format!("{lin:.2e}")),
            ("scalar_error", scalar_err <= 10.0 * dt * dt, format!("{scalar_err:.2e}")),
            ("dt_order", order >= 1.8, format!("{order:.3}")),
            ("krylov_iterations", true, format!("{}", a.krylov_iterations)),
        ],
        start,
    );
}

#[test]
fn criterion_08_nonlinear_terms() {
    let start = Instant::now();
    let sys = system();
    let x = random_transformed(&sys, T, 16, 0.5, 42);
    let r: Vec<[f64; 4]> = [1e-1, 1e-2, 1e-3].iter().map(|e| quadratic_ratios(&sys, &x, *e).unwrap()).collect();
    let mut checks = Vec::new();
    for (c, name) in ["G", "w", "Theta", "Psi"].into_iter().enumerate() {
        let (lo, hi) = r.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v[c]), b.max(v[c])));
        checks.push((name, lo > 0.0 && hi <= 1.2 * lo, format!("{:.3}", hi / lo)));
    }
    let lip_small = lipschitz_constant(&sys, T, 16, 0.01, 3, 7).unwrap();
    let lip_large = lipschitz_constant(&sys, T, 16, 0.1, 3, 7).unwrap();
    checks.push(("lipschitz_R0.01", lip_small.is_finite(), format!("{lip_small:.3e}")));
    checks.push(("lipschitz_R0.1", lip_large.is_finite(), format!("{lip_large:.3e}")));
    report(8, &checks, start);
}

fn nonlinear(sys: &CoupledSystem, eps: f64) -> (PeriodicForcing, NonlinearSolution) {
    let f = PeriodicForcing::outflow_sine(T, eps);
    let opts = NonlinearOptions { steps: NT, ..Default::default() };
    let s = solve_periodic_fsi(sys, &f, &opts).unwrap();
    (f, s)
}

fn doubling(sys: &CoupledSystem, y1: &TransformedSolution, y2: &TransformedSolution) -> f64 {
    y2.sub(&y1.scaled(2.0)).norm(sys) / y1.norm(sys)
}

#[test]
fn criterion_09_nonlinear_periodic_solve() {
    let start = Instant::now();
    let sys = system();
    let (_, a) = nonlinear(&sys, 5e-4);
    let (_, b) = nonlinear(&sys, 1e-3);
    let (_, c) = nonlinear(&sys, 2e-3);
    print!("{}", b.log());
    let rates: Vec<f64> = b.history.iter().rev().take(3).filter_map(|r| r.rate).collect();
    let rate_max = rates.iter().copied().fold(0.0, f64::max);
    let d_small = doubling(&sys, &a.solution, &b.solution);
    let d = doubling(&sys, &b.solution, &c.solution);
    let zero = solve_periodic_fsi(&sys, &PeriodicForcing::zero(T), &NonlinearOptions { steps: NT, ..Default::default() }).unwrap();
    let zero_ok = zero.converged && zero.iterations() <= 1 && zero.solution.u.iter().all(|u| u.max_abs() == 0.0);
    report(
        9,
        &[
            ("converged", b.converged && b.history.len() >= 3, format!("{}its", b.iterations())),
            ("rates", !rates.is_empty() && rate_max < 0.9, format!("{rate_max:.2e}")),
            ("defect", b.trajectory.defect <= 1e-7, format!("{:.2e}", b.trajectory.defect)),
            ("min_1+eta", b.solution.min_one_plus_eta() > 0.5, format!("{:.6}", b.solution.min_one_plus_eta())),
            ("doubling", d <= 0.1, format!("{d:.3e}")),
            ("doubling_decreases", d_small < d, format!("{d_small:.3e}")),
            ("zero_forcing", zero_ok, format!("{}its", zero.iterations())),
            ("C_L", true, format!("{:.3e}", b.linear_constant)),
        ],
        start,
    );
}

#[test]
fn criterion_10_interface_consistency() {
    let start = Instant::now();
    let sys = system();
    let (f, s) = nonlinear(&sys, 1e-3);
    let opts = NonlinearOptions::default();
    let interface = s.trajectory.interface_defect();
    let r = transformed_residuals(&sys, &s.solution, &f).unwrap();
    // discretization part of the residuals: the same residuals of the linear response
    let lin = solve_periodic_linear_fsi(&sys, &f, &PeriodicOptions { steps: NT, gmres: opts.gmres.clone(), ..Default::default() }).unwrap();
    let r_lin = transformed_residuals(&sys, &TransformedSolution::from_trajectory(&lin), &f).unwrap();
    let alg = 10.0 * opts.tol;
    println!("nonlinear residuals: {}", r.line());
    println!("linear-response residuals: {}", r_lin.line());
    report(
        10,
        &[
            ("interface", interface <= 1e-6, format!("{interface:.2e}")),
            ("divergence", r.divergence <= alg, format!("{:.2e}", r.divergence)),
            ("momentum", r.momentum <= alg + 1.5 * r_lin.momentum, format!("{:.2e}", r.momentum)),
            ("beam", r.beam <= alg + 1.5 * r_lin.beam, format!("{:.2e}", r.beam)),
            ("outflow", r.outflow <= alg + 1.5 * r_lin.outflow, format!("{:.2e}", r.outflow)),
        ],
        start,
    );
}
