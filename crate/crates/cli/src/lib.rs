//! Run orchestration behind the `pfsi` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

use config::SolverConfig;
use output::{FailureRecord, Manifest};
use std::path::Path;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Stokes,
    Eigs,
    PeriodicLinear,
    Solve,
    Verify,
    Sweep,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Stokes => "stokes",
            Subcommand::Eigs => "eigs",
            Subcommand::PeriodicLinear => "periodic-linear",
            Subcommand::Solve => "solve",
            Subcommand::Verify => "verify",
            Subcommand::Sweep => "sweep",
        }
    }
}

/// A failed run: a stable class string and the process exit status.
#[derive(Clone, Debug)]
pub struct Failure {
    pub class: String,
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(class: &str, code: i32, message: impl Into<String>) -> Self {
        Failure { class: class.into(), code, message: message.into() }
    }
}

impl From<periodic_fsi::Error> for Failure {
    fn from(e: periodic_fsi::Error) -> Self {
        Failure { class: e.class().into(), code: e.exit_code(), message: e.to_string() }
    }
}

pub type RunResult = std::result::Result<(), Failure>;

/// Run `cmd`, writing artifacts and `manifest.toml` into `out`. The manifest
/// is written on failure too.
pub fn run(cmd: Subcommand, cfg: &SolverConfig, out: &Path) -> std::result::Result<Manifest, (Manifest, Failure)> {
    let mut m = Manifest::new(cmd.name(), Some(cfg));
    if let Err(e) = std::fs::create_dir_all(out) {
        let f = Failure::from(periodic_fsi::Error::Io(e));
        return Err((m, f));
    }
    let start = Instant::now();
    let res = match cmd {
        Subcommand::Stokes => commands::stokes(cfg, out, &mut m),
        Subcommand::Eigs => commands::eigs(cfg, out, &mut m),
        Subcommand::PeriodicLinear => commands::periodic_linear(cfg, out, &mut m),
        Subcommand::Solve => commands::solve(cfg, out, &mut m),
        Subcommand::Verify => verify::run(cfg, out, &mut m),
        Subcommand::Sweep => commands::sweep(cfg, out, &mut m),
    };
    m.timings.insert("total_seconds".into(), start.elapsed().as_secs_f64());
    if let Err(f) = &res {
        m.status = "failure".into();
        m.failure = Some(FailureRecord { class: f.class.clone(), message: f.message.clone() });
    }
    let written = m.write(out);
    match (res, written) {
        (Ok(()), Ok(_)) => Ok(m),
        (Err(f), _) => Err((m, f)),
        (Ok(()), Err(e)) => Err((m, e.into())),
    }
}

/// Manifest for a run whose config never validated.
pub fn write_config_failure(cmd: Subcommand, out: &Path, f: &Failure) {
    let mut m = Manifest::new(cmd.name(), None);
    m.status = "failure".into();
    m.failure = Some(FailureRecord { class: f.class.clone(), message: f.message.clone() });
    if std::fs::create_dir_all(out).is_ok() {
        let _ = m.write(out);
    }
}
