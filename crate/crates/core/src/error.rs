use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("staggering mismatch: expected {expected}, got {got}")]
    StaggerMismatch { expected: &'static str, got: &'static str },

    #[error("discretization mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    InvalidConfig(Vec<String>),

    #[error("assembly failure: {0}")]
    Assembly(String),

    #[error("{what} did not converge (last residuals: {history:?})")]
    SolverFailure { what: String, history: Vec<f64> },

    #[error("time step {step} failed: {source}")]
    StepFailure {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("spectral check inconclusive: {0}")]
    Inconclusive(String),

    #[error("periodicity defect {defect:.3e} above tolerance {tol:.3e}")]
    PeriodicityDefect { defect: f64, tol: f64 },

    #[error("domain degeneracy: min(1 + eta) = {min_one_plus_eta:.3e}")]
    DomainDegeneracy { min_one_plus_eta: f64 },

    #[error("ball violation ({constraint}): value {value:.4e} exceeds bound {bound:.4e}")]
    BallViolation { constraint: &'static str, value: f64, bound: f64 },

    #[error("Picard iteration not contracting: rates {rates:?}; {guidance}")]
    NonContraction { rates: Vec<f64>, guidance: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    /// Machine-readable class string, stable across versions.
    pub fn class(&self) -> &'static str {
        match self {
            Error::StaggerMismatch { .. } | Error::GridMismatch(_) => "input-mismatch",
            Error::InvalidConfig(_) => "config-invalid",
            Error::Assembly(_) => "assembly-failure",
            Error::SolverFailure { .. } | Error::StepFailure { .. } => "solver-failure",
            Error::Eigen(_) => "eigensolver-failure",
            Error::Inconclusive(_) => "spectral-inconclusive",
            Error::PeriodicityDefect { .. } => "periodicity-defect",
            Error::DomainDegeneracy { .. } => "domain-degeneracy",
            Error::BallViolation { .. } => "ball-violation",
            Error::NonContraction { .. } => "non-contraction",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Parse(_) => 2,
            Error::NonContraction { .. } => 4,
            Error::BallViolation { .. } | Error::DomainDegeneracy { .. } => 5,
            _ => 3,
        }
    }
}
