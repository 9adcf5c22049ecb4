//! Time-periodic flow in a channel whose top wall is a clamped damped beam.
//!
//! Layers, bottom up: MAC grid and fields ([`grid`]), Leray projection
//! ([`leray`]), mixed Stokes solves and liftings ([`stokes`]), the beam
//! ([`beam`]), the coupled linear operator and its time stepper
//! ([`coupled`]), its spectrum ([`spectrum`]), periodic solutions of the
//! linear problem ([`periodic`]) and the Picard iteration for the
//! nonlinear one ([`nonlinear`]).

pub mod beam;
pub mod coupled;
pub mod dense;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod krylov;
pub mod leray;
pub mod nonlinear;
pub mod periodic;
pub mod sparse;
pub mod spectrum;
pub mod stokes;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
