use clap::{Parser, ValueEnum};
use periodic_fsi_cli::{config, run, write_config_failure, Failure, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    /// One mixed-boundary Stokes solve with a manufactured-solution report
    Stokes,
    /// Rightmost spectrum of the coupled operator
    Eigs,
    /// Periodic solution of the linear coupled problem
    PeriodicLinear,
    /// Periodic solution of the nonlinear problem by Picard iteration
    Solve,
    /// The invariant suite on the configured problem
    Verify,
    /// Continuation in forcing scale and beam damping
    Sweep,
}

impl From<Cmd> for Subcommand {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Stokes => Subcommand::Stokes,
            Cmd::Eigs => Subcommand::Eigs,
            Cmd::PeriodicLinear => Subcommand::PeriodicLinear,
            Cmd::Solve => Subcommand::Solve,
            Cmd::Verify => Subcommand::Verify,
            Cmd::Sweep => Subcommand::Sweep,
        }
    }
}

/// Time-periodic fluid/beam interaction solver.
///
/// Exit status: 0 success, 2 invalid config, 3 solver failure,
/// 4 non-contraction, 5 ball violation.
#[derive(Parser, Debug)]
#[command(name = "pfsi", version)]
struct Args {
    #[arg(value_enum)]
    subcommand: Cmd,
    /// TOML configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing
    #[arg(long)]
    out: PathBuf,
    /// Seed for randomized checks; overrides `seed` in the config
    #[arg(long)]
    seed: Option<u64>,
    /// `section.key=value`, applied after the file; repeatable
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn fail(f: &Failure) -> ExitCode {
    eprintln!("error[{}]: {}", f.class, f.message);
    ExitCode::from(f.code as u8)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cmd: Subcommand = args.subcommand.into();
    let mut overrides = args.overrides.clone();
    if let Some(s) = args.seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = match config::load(&args.config, &overrides) {
        Ok(c) => c,
        Err(e) => {
            let f = Failure::from(e);
            write_config_failure(cmd, &args.out, &f);
            return fail(&f);
        }
    };
    match run(cmd, &cfg, &args.out) {
        Ok(m) => {
            println!("{} ok; manifest in {}", cmd.name(), args.out.join("manifest.toml").display());
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err((_, f)) => fail(&f),
    }
}
