//! Run configuration read from TOML, with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::registry::PolySpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Registered problem id.
    pub problem: String,
    /// Numeric problem parameters.
    pub params: BTreeMap<String, f64>,
    /// Coefficients for `poly1d`.
    pub poly: Option<PolySpec>,
    pub seed: u64,
    /// Grid size N.
    pub steps: usize,
    /// Path count M.
    pub paths: usize,
    pub output: PathBuf,
    pub adjoint: AdjointConfig,
    pub check: CheckConfig,
    pub variational: VariationalConfig,
    pub ito: ItoConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdjointConfig {
    /// Highest adjoint order k.
    pub order: usize,
    /// Total degree of the regression basis.
    pub basis_degree: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    /// Probe set V; defaults to the control set's probes.
    pub probes: Option<Vec<Vec<f64>>>,
    /// Standard-error multiple of the verdict rule.
    pub k: f64,
    pub tol: f64,
    pub stride: usize,
    pub sample_paths: usize,
    /// τ values of the integral test.
    pub taus: Vec<f64>,
    /// θ ladder of the ∂⁺ estimate.
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariationalConfig {
    pub tau: f64,
    /// ε ladder.
    pub eps: Vec<f64>,
    /// Moment order β of the order fit.
    pub beta: f64,
    /// Spike values; defaults to the probe set.
    pub values: Option<Vec<Vec<f64>>>,
    /// Standard-error band of the ladder rule.
    pub band: f64,
    /// Also evaluate the duality identities in `taylor`.
    pub duality: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ItoConfig {
    pub arities: Vec<usize>,
    pub dims: Vec<usize>,
    /// Random instances per (arity, dim).
    pub instances: usize,
    /// Step counts; each must divide the largest.
    pub levels: Vec<usize>,
    pub min_slope: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "example1".into(),
            params: BTreeMap::new(),
            poly: None,
            seed: 1,
            steps: 128,
            paths: 10_000,
            output: PathBuf::from("out"),
            adjoint: AdjointConfig::default(),
            check: CheckConfig::default(),
            variational: VariationalConfig::default(),
            ito: ItoConfig::default(),
        }
    }
}

impl Default for AdjointConfig {
    fn default() -> Self {
        Self { order: 4, basis_degree: 3 }
    }
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { probes: None, k: 3.0, tol: 1e-8, stride: 1, sample_paths: 1000, taus: vec![0.25, 0.5], theta: vec![0.125, 0.0625, 0.03125] }
    }
}

impl Default for VariationalConfig {
    fn default() -> Self {
        Self { tau: 0.25, eps: (2..=7).map(|k| 0.5f64.powi(k)).collect(), beta: 2.0, values: None, band: 3.0, duality: false }
    }
}

impl Default for ItoConfig {
    fn default() -> Self {
        Self { arities: vec![1, 2, 3], dims: vec![1, 2], instances: 2, levels: vec![64, 128, 256, 512, 1024], min_slope: 0.4 }
    }
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub output: Option<PathBuf>,
    pub problem: Option<String>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.paths {
            self.paths = v;
        }
        if let Some(v) = o.steps {
            self.steps = v;
        }
        if let Some(v) = &o.output {
            self.output = v.clone();
        }
        if let Some(v) = &o.problem {
            self.problem = v.clone();
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Field-level checks. Ladders must sit on the grid of the given horizon.
    pub fn validate(&self, horizon: f64) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if self.steps == 0 {
            return bad("steps", "must be positive".into());
        }
        if self.paths == 0 {
            return bad("paths", "must be positive".into());
        }
        if !(1..=4).contains(&self.adjoint.order) {
            return bad("adjoint.order", format!("must be in 1..=4, got {}", self.adjoint.order));
        }
        let dt = horizon / self.steps as f64;
        let on_grid = |v: f64| {
            let k = (v / dt).round();
            k >= 0.0 && (k * dt - v).abs() <= 1e-9 * horizon
        };
        let c = &self.check;
        if !(c.k >= 0.0) || !(c.tol >= 0.0) {
            return bad("check", "k and tol must be non-negative".into());
        }
        if c.stride == 0 || c.sample_paths == 0 {
            return bad("check", "stride and sample_paths must be positive".into());
        }
        for (field, list, positive) in [("check.taus", &c.taus, false), ("check.theta", &c.theta, true), ("variational.eps", &self.variational.eps, true)] {
            for v in list.iter() {
                if !on_grid(*v) || (positive && *v <= 0.0) || *v > horizon {
                    return bad(field, format!("{v} is not a {}multiple of Δt = {dt} in [0, T]", if positive { "positive " } else { "" }));
                }
            }
        }
        let tau = self.variational.tau;
        if !on_grid(tau) || tau >= horizon {
            return bad("variational.tau", format!("{tau} is not a grid node in [0, T)"));
        }
        if let Some(e) = self.variational.eps.iter().find(|e| tau + *e > horizon + 1e-12) {
            return bad("variational.eps", format!("τ + ε = {} exceeds T", tau + e));
        }
        let wmax = c.theta.iter().copied().fold(0.0, f64::max);
        if let Some(t) = c.taus.iter().find(|t| *t + wmax > horizon + 1e-12) {
            return bad("check.taus", format!("τ = {t} leaves no room for θ = {wmax}"));
        }
        if !(self.variational.beta > 0.0) {
            return bad("variational.beta", "must be positive".into());
        }
        let ito = &self.ito;
        let finest = ito.levels.iter().copied().max().unwrap_or(0);
        if ito.levels.iter().any(|l| *l == 0 || finest % l != 0) {
            return bad("ito.levels", "every level must be positive and divide the largest".into());
        }
        if ito.arities.iter().any(|d| !(1..=4).contains(d)) || ito.dims.contains(&0) {
            return bad("ito", "arities must be in 1..=4 and dims positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_rejects_unknown_keys() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(RunConfig::from_toml("stepz = 3").is_err());
        let c = RunConfig::from_toml("problem = \"example2\"\n[check]\nk = 2.0\n").unwrap();
        assert_eq!(c.check.k, 2.0);
        assert_eq!(c.check.tol, 1e-8);
    }

    #[test]
    fn validation_messages_name_the_field() {
        let mut c = RunConfig { paths: 0, ..RunConfig::default() };
        assert!(c.validate(1.0).unwrap_err().to_string().contains("paths"));
        c.paths = 10;
        c.variational.eps = vec![0.3];
        assert!(c.validate(1.0).unwrap_err().to_string().contains("variational.eps"));
    }
}
