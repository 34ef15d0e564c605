//! Run configuration: one TOML document, every key optional.
//!
//! A manifest written by a previous run is also accepted; its `config`
//! object is the resolved configuration of that run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use schrodinger_core::asymptotics::{ExperimentConfig, ExperimentSpec};
use schrodinger_core::verify::{OracleConfig, VerifyConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed of experiment subcommands.
    pub seed: u64,
    pub experiment: ExperimentConfig,
    pub run: RunSettings,
    pub verify: VerifyConfig,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            experiment: ExperimentConfig::default(),
            run: RunSettings::default(),
            verify: VerifyConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

/// Replication settings shared by the experiment subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub eps: Vec<f64>,
    /// Replications per noise level for `rates` and `bvm`.
    pub replications: usize,
    /// Replications per noise level for `coverage`.
    pub coverage_replications: usize,
    /// Credibility levels `β` of the `1 − β` intervals.
    pub betas: Vec<f64>,
    pub prior_draws: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            eps: vec![0.2, 0.1, 0.05, 0.025],
            replications: 10,
            coverage_replications: 100,
            betas: vec![0.1],
            prior_draws: 1000,
        }
    }
}

impl RunConfig {
    /// Reads a TOML config or a JSON manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            #[derive(Deserialize)]
            struct Snapshot {
                config: RunConfig,
            }
            let s: Snapshot =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Ok(s.config)
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    /// `--seed` replaces every seed in the document.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.verify.seed = seed;
        self.oracle.seed = seed;
    }

    /// Checks that need no numerics.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        let r = &self.run;
        if r.eps.is_empty() {
            return bad("run.eps", "must list at least one noise level".into());
        }
        if let Some(e) = r.eps.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return bad("run.eps", format!("noise levels must be positive and finite, got {e}"));
        }
        if r.eps.iter().enumerate().any(|(i, e)| r.eps[..i].contains(e)) {
            return bad("run.eps", "noise levels must be distinct".into());
        }
        if r.replications == 0 {
            return bad("run.replications", "must be at least 1".into());
        }
        if r.coverage_replications == 0 {
            return bad("run.coverage_replications", "must be at least 1".into());
        }
        if let Some(b) = r.betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return bad("run.betas", format!("credibility levels must lie in (0, 1), got {b}"));
        }
        if r.betas.is_empty() {
            return bad("run.betas", "must list at least one level".into());
        }
        if r.prior_draws == 0 {
            return bad("run.prior_draws", "must be at least 1".into());
        }
        for (name, dim) in [("verify.dim", self.verify.dim), ("oracle.dim", self.oracle.dim), ("experiment.dim", self.experiment.dim)] {
            if !(1..=2).contains(&dim) {
                return bad(name, format!("must be 1 or 2, got {dim}"));
            }
        }
        if self.verify.pairs == 0 {
            return bad("verify.pairs", "must be at least 1".into());
        }
        if !(self.verify.tol > 0.0) {
            return bad("verify.tol", format!("must be positive, got {}", self.verify.tol));
        }
        if self.oracle.n_paths < 2 {
            return bad("oracle.n_paths", format!("need at least 2 paths, got {}", self.oracle.n_paths));
        }
        if !(self.oracle.dt_factor > 0.0 && self.oracle.dt_factor.is_finite()) {
            return bad("oracle.dt_factor", format!("must be positive, got {}", self.oracle.dt_factor));
        }
        let m = &self.experiment.mcmc;
        if m.iterations == 0 {
            return bad("experiment.mcmc.iterations", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&m.burn_in_fraction) {
            return bad("experiment.mcmc.burn_in_fraction", format!("must lie in [0, 1), got {}", m.burn_in_fraction));
        }
        Ok(())
    }

    /// Builds the experiment and checks the interior point condition at
    /// every listed noise level.
    pub fn experiment_spec(&self) -> Result<ExperimentSpec, CliError> {
        let spec = self.experiment.build().map_err(|e| CliError::Config(format!("experiment: {e}")))?;
        for &eps in &self.run.eps {
            let margin = spec.interior_margin(eps).map_err(|e| CliError::Config(format!("experiment: {e}")))?;
            if margin <= 0.0 {
                return Err(CliError::Config(format!(
                    "experiment: truth lies outside the prior support at eps {eps} (margin {margin:.3e})"
                )));
            }
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_key_names_the_field() {
        let err = toml::from_str::<RunConfig>("[run]\nreplicates = 3\n").unwrap_err().to_string();
        assert!(err.contains("replicates"), "{err}");
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = RunConfig::default();
        c.run.betas = vec![1.5];
        let CliError::Config(msg) = c.validate().unwrap_err() else { panic!() };
        assert!(msg.starts_with("run.betas"), "{msg}");
    }
}
