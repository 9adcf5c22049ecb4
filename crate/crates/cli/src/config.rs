//! TOML run configuration. Every section is optional and falls back to the
//! default configuration; unknown keys are rejected.

use periodic_fsi::beam::BeamParams;
use periodic_fsi::coupled::CoupledSystem;
use periodic_fsi::grid::Grid2D;
use periodic_fsi::krylov::GmresOptions;
use periodic_fsi::nonlinear::NonlinearOptions;
use periodic_fsi::periodic::{FourierSeries, OutflowShape, PeriodicForcing, PeriodicOptions};
use periodic_fsi::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub seed: u64,
    pub domain: Domain,
    pub fluid: Fluid,
    pub beam: Beam,
    pub discretization: Discretization,
    pub forcing: Forcing,
    pub tolerances: Tolerances,
    pub ball: Ball,
    pub spectrum: Spectrum,
    pub verify: Verify,
    pub sweep: Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Domain {
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fluid {
    pub nu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Beam {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Discretization {
    pub nx: usize,
    pub nz: usize,
    /// Beam nodes sit under the fluid cells, so this must equal `nx`.
    pub beam_nodes: usize,
    pub steps: usize,
    pub theta: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InflowProfile {
    /// `(z (1 - z))^2`, the only profile vanishing at the corners that the
    /// liftings support.
    #[default]
    Quartic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inflow {
    pub amplitude: f64,
    pub profile: InflowProfile,
    pub mean: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outflow {
    pub amplitude: f64,
    pub shape: OutflowShape,
    pub mean: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Forcing {
    pub period: f64,
    pub omega1: Inflow,
    pub omega2: Outflow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Threshold for the projection, lifting and equivalence checks.
    pub elliptic: f64,
    pub krylov: f64,
    /// Inner Krylov tolerance of each Picard step.
    pub picard_krylov: f64,
    pub picard: f64,
    pub defect: f64,
    pub krylov_restart: usize,
    pub krylov_max_iter: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ball {
    pub mu_star: f64,
    pub r_star: f64,
    pub allow_large_forcing: bool,
    pub max_iter: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Spectrum {
    pub eigenvalues: usize,
    pub arnoldi_steps: usize,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Verify {
    pub random_fields: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    /// Multipliers of the configured forcing, run in the given order.
    pub scales: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            seed: 1,
            domain: Domain::default(),
            fluid: Fluid::default(),
            beam: Beam::default(),
            discretization: Discretization::default(),
            forcing: Forcing::default(),
            tolerances: Tolerances::default(),
            ball: Ball::default(),
            spectrum: Spectrum::default(),
            verify: Verify::default(),
            sweep: Sweep::default(),
        }
    }
}

impl Default for Domain {
    fn default() -> Self {
        Domain { length: 2.0 }
    }
}

impl Default for Fluid {
    fn default() -> Self {
        Fluid { nu: 0.1 }
    }
}

impl Default for Beam {
    fn default() -> Self {
        Beam { alpha: 1.0, beta: 0.0, gamma: 0.5 }
    }
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization { nx: 48, nz: 24, beam_nodes: 48, steps: 64, theta: 0.5 }
    }
}

// A partial table keeps the unit sine, so setting only an amplitude works.
impl Default for Inflow {
    fn default() -> Self {
        Inflow { amplitude: 0.0, profile: InflowProfile::Quartic, mean: 0.0, cos: vec![], sin: vec![1.0] }
    }
}

impl Default for Outflow {
    fn default() -> Self {
        Outflow { amplitude: 1e-3, shape: OutflowShape::Uniform, mean: 0.0, cos: vec![], sin: vec![1.0] }
    }
}

impl Default for Forcing {
    fn default() -> Self {
        Forcing { period: 1.0, omega1: Inflow::default(), omega2: Outflow::default() }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            elliptic: 1e-8,
            krylov: 1e-10,
            picard_krylov: 1e-10,
            picard: 1e-8,
            defect: 1e-7,
            krylov_restart: 40,
            krylov_max_iter: 400,
        }
    }
}

impl Default for Ball {
    fn default() -> Self {
        Ball { mu_star: 2.0, r_star: 1.0, allow_large_forcing: false, max_iter: 30 }
    }
}

impl Default for Spectrum {
    fn default() -> Self {
        Spectrum { eigenvalues: 20, arnoldi_steps: 20, margin: 1e-6 }
    }
}

impl Default for Verify {
    fn default() -> Self {
        Verify { random_fields: 20 }
    }
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep { scales: vec![0.5, 1.0, 2.0, 4.0], gammas: vec![0.5] }
    }
}

/// Parse `text`, apply `key.path=value` overrides, then validate.
pub fn parse(text: &str, overrides: &[String]) -> Result<SolverConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: SolverConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<SolverConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse(&text, overrides)
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Parse(format!("override `{spec}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Parse(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl SolverConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every violated constraint, not only the first.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if let Err(Error::InvalidConfig(v)) = self.beam_params() {
            bad.extend(v.into_iter().map(|m| format!("beam/fluid: {m}")));
        }
        let d = &self.discretization;
        let mut need = |ok: bool, msg: String| {
            if !ok {
                bad.push(msg);
            }
        };
        need(d.nx >= 4, format!("discretization.nx must be >= 4, got {}", d.nx));
        need(d.nz >= 4, format!("discretization.nz must be >= 4, got {}", d.nz));
        need(d.steps >= 4, format!("discretization.steps must be >= 4, got {}", d.steps));
        need(d.beam_nodes == d.nx, format!("discretization.beam_nodes must equal nx = {}, got {}", d.nx, d.beam_nodes));
        need((0.5..=1.0).contains(&d.theta), format!("discretization.theta must lie in [0.5, 1], got {}", d.theta));
        need(self.domain.length > 0.0 && self.domain.length.is_finite(), format!("domain.length must be > 0, got {}", self.domain.length));
        let f = &self.forcing;
        need(f.period > 0.0 && f.period.is_finite(), format!("forcing.period must be > 0, got {}", f.period));
        let coeffs = [f.omega1.amplitude, f.omega1.mean, f.omega2.amplitude, f.omega2.mean]
            .into_iter()
            .chain(f.omega1.cos.iter().chain(&f.omega1.sin).chain(&f.omega2.cos).chain(&f.omega2.sin).copied());
        need(coeffs.into_iter().all(f64::is_finite), "forcing coefficients must be finite".into());
        let t = &self.tolerances;
        for (name, v) in [
            ("elliptic", t.elliptic),
            ("krylov", t.krylov),
            ("picard_krylov", t.picard_krylov),
            ("picard", t.picard),
            ("defect", t.defect),
        ] {
            need(v > 0.0 && v < 1.0, format!("tolerances.{name} must lie in (0, 1), got {v}"));
        }
        need(t.krylov_restart >= 1, "tolerances.krylov_restart must be >= 1".into());
        need(t.krylov_max_iter >= 1, "tolerances.krylov_max_iter must be >= 1".into());
        need(self.ball.mu_star > 1.0, format!("ball.mu_star must be > 1, got {}", self.ball.mu_star));
        need(self.ball.r_star > 0.0, format!("ball.r_star must be > 0, got {}", self.ball.r_star));
        need(self.ball.max_iter >= 1, "ball.max_iter must be >= 1".into());
        need(self.spectrum.eigenvalues >= 1, "spectrum.eigenvalues must be >= 1".into());
        need(self.spectrum.arnoldi_steps >= 2, "spectrum.arnoldi_steps must be >= 2".into());
        need(self.spectrum.margin > 0.0, "spectrum.margin must be > 0".into());
        need(self.verify.random_fields >= 1, "verify.random_fields must be >= 1".into());
        need(!self.sweep.scales.is_empty(), "sweep.scales must not be empty".into());
        need(self.sweep.scales.iter().all(|s| s.is_finite()), "sweep.scales must be finite".into());
        need(
            !self.sweep.gammas.is_empty() && self.sweep.gammas.iter().all(|g| *g > 0.0),
            "sweep.gammas must be non-empty and positive".into(),
        );
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad))
        }
    }

    pub fn beam_params(&self) -> Result<BeamParams> {
        BeamParams::new(self.beam.alpha, self.beam.beta, self.beam.gamma, self.fluid.nu)
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.discretization.nx, self.discretization.nz, self.domain.length)
    }

    pub fn system(&self) -> Result<CoupledSystem> {
        CoupledSystem::new(self.grid()?, self.beam_params()?)
    }

    pub fn with_gamma(&self, gamma: f64) -> SolverConfig {
        let mut c = self.clone();
        c.beam.gamma = gamma;
        c
    }

    pub fn forcing(&self) -> PeriodicForcing {
        let f = &self.forcing;
        PeriodicForcing {
            period: f.period,
            omega1_amplitude: f.omega1.amplitude,
            omega1: FourierSeries { mean: f.omega1.mean, cos: f.omega1.cos.clone(), sin: f.omega1.sin.clone() },
            omega2_amplitude: f.omega2.amplitude,
            omega2: FourierSeries { mean: f.omega2.mean, cos: f.omega2.cos.clone(), sin: f.omega2.sin.clone() },
            omega2_shape: f.omega2.shape,
            extra: None,
        }
    }

    pub fn gmres(&self) -> GmresOptions {
        let t = &self.tolerances;
        GmresOptions { tol: t.krylov, restart: t.krylov_restart, max_iter: t.krylov_max_iter }
    }

    pub fn periodic_options(&self) -> PeriodicOptions {
        PeriodicOptions {
            steps: self.discretization.steps,
            theta: self.discretization.theta,
            gmres: self.gmres(),
            defect_tol: self.tolerances.defect,
            check_spectrum: false,
            arnoldi_steps: self.spectrum.arnoldi_steps,
            margin: self.spectrum.margin,
        }
    }

    pub fn nonlinear_options(&self) -> NonlinearOptions {
        NonlinearOptions {
            steps: self.discretization.steps,
            theta: self.discretization.theta,
            mu_star: self.ball.mu_star,
            r_star: self.ball.r_star,
            tol: self.tolerances.picard,
            max_iter: self.ball.max_iter,
            allow_large_forcing: self.ball.allow_large_forcing,
            gmres: GmresOptions { tol: self.tolerances.picard_krylov, ..self.gmres() },
            defect_tol: self.tolerances.defect,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = parse("", &[]).unwrap();
        assert_eq!(c, SolverConfig::default());
        assert_eq!(c.discretization.nx, 48);
        assert_eq!(c.forcing().omega2.sin, vec![1.0]);
    }

    #[test]
    fn serialization_round_trips() {
        let mut c = SolverConfig::default();
        c.forcing.omega1.amplitude = 0.125;
        c.forcing.omega1.cos = vec![0.1, 1.0 / 3.0];
        c.forcing.omega2.shape = OutflowShape::SinPi;
        let back = parse(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_apply_dotted_keys() {
        let o = ["fluid.nu=0.05", "discretization.nx=16", "discretization.beam_nodes=16", "forcing.omega2.shape=sin-pi", "seed=7"]
            .map(String::from);
        let c = parse("[fluid]\nnu = 0.2\n", &o).unwrap();
        assert_eq!(c.fluid.nu, 0.05);
        assert_eq!(c.discretization.nx, 16);
        assert_eq!(c.forcing.omega2.shape, OutflowShape::SinPi);
        assert_eq!(c.seed, 7);
        let c = parse("", &["forcing.omega2.amplitude=0.5".into(), "forcing.omega1.amplitude=0.25".into()]).unwrap();
        assert_eq!(c.forcing().omega2.sin, vec![1.0]);
        assert_eq!(c.forcing().omega2_amplitude, 0.5);
        assert!(!c.forcing().omega1.is_zero());
        let c = parse("", &["sweep.scales=[1.0, 3.0]".into()]).unwrap();
        assert_eq!(c.sweep.scales, vec![1.0, 3.0]);
    }

    #[test]
    fn validation_lists_every_violation() {
        let err = parse("[beam]\ngamma = -1.0\n[discretization]\nnz = 2\n[forcing]\nperiod = 0.0\n", &[]).unwrap_err();
        let Error::InvalidConfig(v) = &err else { panic!("{err:?}") };
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(v.iter().any(|m| m.contains("gamma")));
        assert!(v.iter().any(|m| m.contains("nz")));
        assert!(v.iter().any(|m| m.contains("period")));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_and_bad_overrides_are_parse_errors() {
        assert!(matches!(parse("[fluid]\nmu = 1.0\n", &[]), Err(Error::Parse(_))));
        assert!(matches!(parse("", &["nonsense".into()]), Err(Error::Parse(_))));
        assert!(matches!(parse("", &["fluid.nu.x=1".into()]), Err(Error::Parse(_))));
    }

    #[test]
    fn only_corner_vanishing_inflow_profiles_parse() {
        assert!(parse("", &["forcing.omega1.profile=quartic".into()]).is_ok());
        assert!(matches!(parse("", &["forcing.omega1.profile=uniform".into()]), Err(Error::Parse(_))));
    }
}
