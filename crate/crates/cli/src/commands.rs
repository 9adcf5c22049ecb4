use crate::config::SolverConfig;
use crate::output::{write_beam, write_fields, write_table, Manifest};
use crate::{Failure, RunResult};
use periodic_fsi::grid::{Grid2D, ScalarField, Stagger};
use periodic_fsi::nonlinear::{solve_periodic_fsi, solve_periodic_fsi_from, transformed_residuals, NonlinearSolution};
use periodic_fsi::periodic::{check_spectral_criterion, solve_periodic_linear_fsi, trajectory_norm, LinearFsi};
use periodic_fsi::spectrum::rightmost_eigenvalues;
use periodic_fsi::stokes::{Manufactured, RightBoundary, StokesSolver, VelocityData};
use periodic_fsi::Error;
use std::path::Path;

fn fields_dir(out: &Path) -> std::result::Result<std::path::PathBuf, Failure> {
    let d = out.join("fields");
    std::fs::create_dir_all(&d).map_err(Error::Io)?;
    Ok(d)
}

struct StokesReport {
    velocity_error: f64,
    pressure_error: f64,
    residual_momentum: f64,
    residual_divergence: f64,
}

fn manufactured_run(g: Grid2D, nu: f64, out: Option<&Path>) -> periodic_fsi::Result<StokesReport> {
    let m = Manufactured { len: g.length, lambda: 0.0, nu, c: 0.3 };
    let s = StokesSolver::new(g, RightBoundary::Outflow, 0.0, nu)?;
    let sol = s.solve(&m.forcing(g), &VelocityData::zeros(&g))?;
    let exact_p = ScalarField::from_fn(g, Stagger::Cell, |x, z| m.p(x, z));
    let pressure_error = sol.p.data.iter().zip(&exact_p.data).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
    if let Some(path) = out {
        write_fields(path, &sol.u, &sol.p)?;
    }
    Ok(StokesReport {
        velocity_error: sol.u.sub(&m.velocity(g)).norm(),
        pressure_error,
        residual_momentum: sol.residual_momentum,
        residual_divergence: sol.residual_divergence,
    })
}

/// One mixed-boundary Stokes solve of a manufactured problem, plus the
/// observed order against the half-resolution grid when it exists.
pub fn stokes(cfg: &SolverConfig, out: &Path, m: &mut Manifest) -> RunResult {
    let g = cfg.grid()?;
    let fine = manufactured_run(g, cfg.fluid.nu, Some(&out.join("stokes_fields.csv")))?;
    m.files.push("stokes_fields.csv".into());
    m.margin("velocity_l2_error", fine.velocity_error);
    m.margin("pressure_max_error", fine.pressure_error);
    m.margin("residual_momentum", fine.residual_momentum);
    m.margin("residual_divergence", fine.residual_divergence);
    let mut report = format!(
        "grid {}x{} L={} nu={}\nvelocity L2 error {:.6e}\npressure max error {:.6e}\nmomentum residual {:.3e}\ndivergence residual {:.3e}\n",
        g.nx, g.nz, g.length, cfg.fluid.nu, fine.velocity_error, fine.pressure_error, fine.residual_momentum, fine.residual_divergence
    );
    if g.nx % 2 == 0 && g.nz % 2 == 0 && g.nx >= 8 && g.nz >= 8 {
        let coarse = manufactured_run(Grid2D::new(g.nx / 2, g.nz / 2, g.length)?, cfg.fluid.nu, None)?;
        let order = (coarse.velocity_error / fine.velocity_error).log2();
        m.margin("observed_order", order);
        report.push_str(&format!("observed order vs {}x{}: {order:.4}\n", g.nx / 2, g.nz / 2));
    }
    std::fs::write(out.join("stokes_report.txt"), report).map_err(Error::Io)?;
    m.files.push("stokes_report.txt".into());
    Ok(())
}

pub fn eigs(cfg: &SolverConfig, out: &Path, m: &mut Manifest) -> RunResult {
    let sys = cfg.system()?;
    let rep = rightmost_eigenvalues(&sys, cfg.spectrum.eigenvalues)?;
    std::fs::write(out.join("eigenvalues.txt"), rep.table()).map_err(Error::Io)?;
    m.files.push("eigenvalues.txt".into());
    let re = rep.max_real_part();
    let energy = rep.pairs.iter().map(|p| p.energy_residual).fold(0.0, f64::max);
    m.margin("max_real_part", re);
    m.margin("min_singular_value", rep.min_singular_value);
    m.margin("max_energy_residual", energy);
    m.margin("reduced_dim", rep.reduced_dim as i64);
    if re >= 0.0 {
        return Err(Failure::new("unstable-spectrum", 3, format!("eigenvalue with real part {re:.6e} >= 0")));
    }
    Ok(())
}

pub fn periodic_linear(cfg: &SolverConfig, out: &Path, m: &mut Manifest) -> RunResult {
    let sys = cfg.system()?;
    let forcing = cfg.forcing();
    forcing.validate()?;
    let opts = cfg.periodic_options();
    let fsi = LinearFsi::new(&sys, forcing.period, opts.steps, opts.theta)?;
    let crit = check_spectral_criterion(&fsi, opts.arnoldi_steps, opts.margin)?;
    m.margin("rho_max", crit.rho_max);
    m.margin("rho_distance_from_one", crit.distance_from_one);
    m.margin("rho_conclusive", crit.conclusive);
    if !crit.admissible {
        return Err(Error::Inconclusive(format!(
            "rho_max {:.6}, distance from 1 {:.3e} below margin {:.1e}",
            crit.rho_max, crit.distance_from_one, opts.margin
        ))
        .into());
    }
    let traj = solve_periodic_linear_fsi(&sys, &forcing, &opts)?;
    m.margin("period", forcing.period);
    m.margin("dt", forcing.period / opts.steps as f64);
    m.margin("defect", traj.defect);
    m.margin("krylov_iterations", traj.krylov_iterations as i64);
    m.margin("krylov_residual", traj.krylov_residual);
    m.margin("interface_defect", traj.interface_defect());
    m.margin("solution_norm", trajectory_norm(&sys, &traj));
    let dir = fields_dir(out)?;
    for (k, (u, p)) in traj.velocity.iter().zip(&traj.pressure).enumerate() {
        write_fields(&dir.join(format!("node_{k:04}.csv")), u, p)?;
    }
    let eta: Vec<_> = traj.states.iter().map(|s| s.eta.clone()).collect();
    let eta_t: Vec<_> = traj.states.iter().map(|s| s.eta_t.clone()).collect();
    write_beam(&out.join("beam.csv"), &traj.times, &eta, &eta_t)?;
    m.files.push(format!("fields/node_0000.csv .. node_{:04}.csv", traj.velocity.len() - 1));
    m.files.push("beam.csv".into());
    Ok(())
}

fn record_nonlinear(m: &mut Manifest, prefix: &str, s: &NonlinearSolution) {
    let last = s.history.last().expect("history");
    m.margin(&format!("{prefix}iterations"), s.iterations() as i64);
    m.margin(&format!("{prefix}converged"), s.converged);
    m.margin(&format!("{prefix}final_relative_residual"), last.relative);
    m.margin(&format!("{prefix}final_rate"), last.rate.unwrap_or(0.0));
    m.margin(&format!("{prefix}linear_constant"), s.linear_constant);
    m.margin(&format!("{prefix}r_margin"), s.r_margin);
    m.margin(&format!("{prefix}mu_margin"), s.mu_margin);
    m.margin(&format!("{prefix}min_one_plus_eta"), s.solution.min_one_plus_eta());
    m.margin(&format!("{prefix}defect"), s.trajectory.defect);
    m.margin(&format!("{prefix}interface_defect"), s.trajectory.interface_defect());
    m.warnings.extend(s.warnings.iter().cloned());
}

fn not_converged(s: &NonlinearSolution) -> Failure {
    let last = s.history.last().expect("history");
    Failure::new(
        "solver-failure",
        3,
        format!("Picard iteration stopped after {} iterations at relative residual {:.3e}", s.iterations(), last.relative),
    )
}

pub fn solve(cfg: &SolverConfig, out: &Path, m: &mut Manifest) -> RunResult {
    let sys = cfg.system()?;
    let forcing = cfg.forcing();
    forcing.validate()?;
    let opts = cfg.nonlinear_options();
    m.margin("data_norm", forcing.data_norm(&sys.grid, opts.steps));
    let s = solve_periodic_fsi(&sys, &forcing, &opts)?;
    std::fs::write(out.join("picard.log"), s.log()).map_err(Error::Io)?;
    m.files.push("picard.log".into());
    record_nonlinear(m, "", &s);
    if !s.converged {
        return Err(not_converged(&s));
    }
    let r = transformed_residuals(&sys, &s.solution, &forcing)?;
    m.margin("residual_divergence", r.divergence);
    m.margin("residual_interface", r.interface);
    m.margin("residual_outflow", r.outflow);
    m.margin("residual_momentum", r.momentum);
    m.margin("residual_beam", r.beam);

    let x = &s.solution;
    let dir = fields_dir(out)?;
    for (k, (u, p)) in x.u.iter().zip(&x.p).enumerate() {
        write_fields(&dir.join(format!("node_{k:04}.csv")), u, p)?;
    }
    let times: Vec<f64> = (0..x.steps()).map(|k| k as f64 * x.dt()).collect();
    write_beam(&out.join("beam.csv"), &times, &x.eta, &x.eta_t)?;
    // physical heights of the pressure points of the deformed domain
    let g = sys.grid;
    let mut rows = Vec::new();
    for (k, node) in s.physical.iter().enumerate() {
        for j in 0..g.nz {
            for i in 0..g.nx {
                rows.push(vec![k.to_string(), i.to_string(), j.to_string(), g.xc(i).to_string(), node.y_p[g.cell(i, j)].to_string()]);
            }
        }
    }
    write_table(&out.join("deformed.csv"), &["node", "i", "j", "x", "y"], &rows)?;
    m.files.extend(
        [format!("fields/node_0000.csv .. node_{:04}.csv", x.steps() - 1), "beam.csv".into(), "deformed.csv".into()],
    );
    Ok(())
}

/// Continuation in the forcing scale for each damping value. Each solve is
/// warm-started from the previous converged one with the same damping; the
/// smallness threshold uses the linear constant measured by the first.
pub fn sweep(cfg: &SolverConfig, out: &Path, m: &mut Manifest) -> RunResult {
    let base = cfg.forcing();
    base.validate()?;
    let opts = cfg.nonlinear_options();
    let mut rows = Vec::new();
    let mut first_failure: Option<Failure> = None;
    for &gamma in &cfg.sweep.gammas {
        let sys = cfg.with_gamma(gamma).system()?;
        let mut prev: Option<NonlinearSolution> = None;
        let mut c_l: Option<f64> = None;
        for &scale in &cfg.sweep.scales {
            let f = base.scaled(scale);
            let data = f.data_norm(&sys.grid, opts.steps);
            let tag = format!("gamma={gamma}/scale={scale}/");
            let res = match (c_l, &prev) {
                (Some(c), _) if data > opts.r_star / (2.0 * c) && !opts.allow_large_forcing => {
                    Err(Error::BallViolation { constraint: "forcing", value: data, bound: opts.r_star / (2.0 * c) })
                }
                (_, Some(p)) => solve_periodic_fsi_from(&sys, &f, &opts, Some(&p.solution)),
                _ => solve_periodic_fsi(&sys, &f, &opts),
            };
            let row = match res {
                Ok(s) if s.converged => {
                    if c_l.is_none() && s.linear_constant > 0.0 {
                        c_l = Some(s.linear_constant);
                    }
                    record_nonlinear(m, &tag, &s);
                    let last = s.history.last().expect("history");
                    let row = vec![
                        gamma.to_string(),
                        scale.to_string(),
                        data.to_string(),
                        "ok".into(),
                        s.iterations().to_string(),
                        last.rate.unwrap_or(0.0).to_string(),
                        s.solution.norm(&sys).to_string(),
                        s.solution.min_one_plus_eta().to_string(),
                    ];
                    prev = Some(s);
                    row
                }
                other => {
                    let f = match other {
                        Ok(s) => not_converged(&s),
                        Err(e) => Failure::from(e),
                    };
                    m.margin(&format!("{tag}failure"), f.class.clone());
                    let row = vec![gamma.to_string(), scale.to_string(), data.to_string(), f.class.clone(), "".into(), "".into(), "".into(), "".into()];
                    first_failure.get_or_insert(f);
                    row
                }
            };
            rows.push(row);
        }
    }
    write_table(
        &out.join("sweep.csv"),
        &["gamma", "scale", "data_norm", "status", "iterations", "final_rate", "solution_norm", "min_one_plus_eta"],
        &rows,
    )?;
    m.files.push("sweep.csv".into());
    match first_failure {
        Some(f) => Err(f),
        None => Ok(()),
    }
}
