//! Run artifacts: the manifest and CSV field dumps.
//!
//! Floats are written with the shortest representation that round-trips,
//! so two runs with the same config and seed produce identical files apart
//! from the `[timings]` table of the manifest.

use crate::config::SolverConfig;
use periodic_fsi::grid::{BeamField, ScalarField, VectorField};
use periodic_fsi::Result;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize)]
pub struct FailureRecord {
    pub class: String,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub core: String,
    pub subcommand: String,
    pub seed: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureRecord>,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
    pub margins: BTreeMap<String, toml::Value>,
    pub timings: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<SolverConfig>,
}

impl Manifest {
    pub fn new(subcommand: &str, config: Option<&SolverConfig>) -> Self {
        Manifest {
            tool: format!("pfsi {}", env!("CARGO_PKG_VERSION")),
            core: format!("periodic-fsi {}", periodic_fsi::VERSION),
            subcommand: subcommand.into(),
            seed: config.map_or(0, |c| c.seed),
            status: "ok".into(),
            failure: None,
            warnings: vec![],
            files: vec![],
            margins: BTreeMap::new(),
            timings: BTreeMap::new(),
            config: config.cloned(),
        }
    }

    pub fn margin(&mut self, key: &str, v: impl Into<toml::Value>) {
        let v = v.into();
        // readers disagree on nan and inf, so store them as strings
        let v = match v {
            toml::Value::Float(f) if !f.is_finite() => toml::Value::String(f.to_string()),
            other => other,
        };
        self.margins.insert(key.into(), v);
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.toml");
        let text = toml::to_string(self).expect("manifest serializes");
        std::fs::write(&path, format!("# pfsi run manifest\n{text}"))?;
        Ok(path)
    }
}

fn csv_err(e: csv::Error) -> periodic_fsi::Error {
    periodic_fsi::Error::Io(std::io::Error::other(e))
}

/// `field,i,j,x,z,value` rows for the velocity components and the pressure.
pub fn write_fields(path: &Path, u: &VectorField, p: &ScalarField) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["field", "i", "j", "x", "z", "value"]).map_err(csv_err)?;
    for (name, f) in [("u1", u.component1()), ("u2", u.component2()), ("p", p.clone())] {
        let (ni, nj) = f.stagger.shape(&f.grid);
        for j in 0..nj {
            for i in 0..ni {
                let (x, z) = f.stagger.position(&f.grid, i, j);
                w.write_record([name.to_string(), i.to_string(), j.to_string(), x.to_string(), z.to_string(), f.at(i, j).to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `node,t,i,x,eta,eta_t` rows over all time nodes.
pub fn write_beam(path: &Path, times: &[f64], eta: &[BeamField], eta_t: &[BeamField]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["node", "t", "i", "x", "eta", "eta_t"]).map_err(csv_err)?;
    for (k, ((t, e), et)) in times.iter().zip(eta).zip(eta_t).enumerate() {
        for i in 0..e.data.len() {
            w.write_record([
                k.to_string(),
                t.to_string(),
                i.to_string(),
                e.node_x(i).to_string(),
                e.data[i].to_string(),
                et.data[i].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Plain CSV with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use periodic_fsi::grid::{Grid2D, Stagger};

    #[test]
    fn field_dump_round_trips_every_digit() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid2D::new(4, 4, 2.0).unwrap();
        let u = VectorField::from_fn(g, |x, z| (x * z).sin() / 3.0, |x, z| x.exp() - z);
        let p = ScalarField::from_fn(g, Stagger::Cell, |x, z| 1.0 / (1.0 + x + 7.0 * z));
        let path = dir.path().join("f.csv");
        write_fields(&path, &u, &p).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        let mut got = Vec::new();
        for rec in r.records() {
            let rec = rec.unwrap();
            got.push((rec[0].to_string(), rec[5].parse::<f64>().unwrap()));
        }
        let want: Vec<f64> = u.u1.iter().chain(&u.u2).chain(&p.data).copied().collect();
        assert_eq!(got.len(), want.len());
        for ((_, a), b) in got.iter().zip(&want) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(got[0].0, "u1");
        assert_eq!(got.last().unwrap().0, "p");
    }

    #[test]
    fn manifest_is_valid_toml_with_config_copy() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SolverConfig::default();
        let mut m = Manifest::new("eigs", Some(&cfg));
        m.margin("max_real_part", -0.25);
        m.margin("inf", f64::INFINITY);
        m.timings.insert("total_seconds".into(), 0.5);
        let text = std::fs::read_to_string(m.write(dir.path()).unwrap()).unwrap();
        let v: toml::Table = toml::from_str(&text).unwrap();
        assert_eq!(v["subcommand"].as_str(), Some("eigs"));
        assert_eq!(v["margins"]["max_real_part"].as_float(), Some(-0.25));
        assert_eq!(v["config"]["discretization"]["nx"].as_integer(), Some(48));
    }
}
