//! Experiment configuration files.
//!
//! The format is TOML: top-level `key = value` pairs plus optional `[train]`
//! and `[arch]` sections. Only `scenario` is required, every other key falls
//! back to the defaults of that scenario. Unknown keys are rejected.
//!
//! ```toml
//! scenario = "linear-gaussian"
//! dims = [10]
//! horizons = [12]
//! particles = [10, 20, 30, 40, 50]
//! proposals = ["min-degeneracy", "mlp"]
//! seeds = 20
//! inner = 100
//!
//! [train]
//! epochs = 200
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pf::DEFAULT_THRESHOLD;
use crate::proposals::{ArchConfig, Registry};
use crate::ssm::Scenario;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// State dimensions N.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    /// Measurement dimension; must equal N−2 on graph scenarios and 2 for SIR.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_dim: Option<usize>,
    /// Horizons T (the trajectory has T+1 samples).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<usize>>,
    /// Filter particle counts K.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposals: Option<Vec<String>>,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    /// Outer repetitions: fresh system, trajectory and training each.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Filter runs averaged into one estimate.
    #[serde(default = "default_inner")]
    pub inner: usize,
    #[serde(default = "default_threshold")]
    pub threshold_ratio: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchConfig>,
}

fn default_snr() -> f64 {
    5.0
}
fn default_seeds() -> usize {
    20
}
fn default_inner() -> usize {
    100
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_out() -> PathBuf {
    PathBuf::from("results")
}

/// Named bundles of overrides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Defaults as configured.
    Full,
    /// 5 seeds, 20 inner runs, 50 epochs.
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset `{other}` (known: full, desk)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Full => "full",
            Preset::Desk => "desk",
        })
    }
}

impl ExperimentConfig {
    /// Configuration with every default of `scenario`.
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            dims: None,
            measurement_dim: None,
            horizons: None,
            particles: None,
            proposals: None,
            snr_db: default_snr(),
            seeds: default_seeds(),
            inner: default_inner(),
            threshold_ratio: default_threshold(),
            seed: 0,
            out: default_out(),
            train: TrainConfig::default(),
            arch: None,
        }
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        if preset == Preset::Desk {
            self.seeds = 5;
            self.inner = 20;
            self.train.epochs = 50;
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match (&self.dims, self.scenario) {
            (Some(d), _) => d.clone(),
            (None, Scenario::Sir) => vec![3],
            (None, _) => vec![10],
        }
    }

    pub fn horizons(&self) -> Vec<usize> {
        match (&self.horizons, self.scenario) {
            (Some(h), _) => h.clone(),
            (None, Scenario::Sir) => vec![199],
            (None, _) => vec![12],
        }
    }

    pub fn particles(&self) -> Vec<usize> {
        match (&self.particles, self.scenario) {
            (Some(k), _) => k.clone(),
            (None, Scenario::Sir) => vec![300],
            (None, _) => vec![10, 20, 30, 40, 50],
        }
    }

    pub fn proposals(&self) -> Vec<String> {
        match (&self.proposals, self.scenario) {
            (Some(p), _) => p.clone(),
            (None, Scenario::Sir) => ["min-degeneracy", "mlp", "rnn", "psi"].map(String::from).to_vec(),
            (None, _) => ["min-degeneracy", "mlp", "rnn", "gnn", "psi"].map(String::from).to_vec(),
        }
    }

    pub fn arch(&self) -> ArchConfig {
        self.arch.clone().unwrap_or_else(|| ArchConfig::for_scenario(self.scenario))
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |key: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("`{key}` must not be empty")))
            } else {
                Ok(())
            }
        };
        let dims = self.dims();
        nonempty("dims", dims.len())?;
        nonempty("horizons", self.horizons().len())?;
        nonempty("particles", self.particles().len())?;
        nonempty("proposals", self.proposals().len())?;
        if self.scenario == Scenario::Sir {
            if dims != [3] {
                return Err(Error::Config(format!("`dims` must be [3] for the SIR scenario, got {dims:?}")));
            }
            if self.measurement_dim.is_some_and(|m| m != 2) {
                return Err(Error::Config("`measurement_dim` must be 2 for the SIR scenario".into()));
            }
        } else {
            if let Some(n) = dims.iter().find(|n| **n < 4) {
                return Err(Error::Config(format!("`dims` entry {n} is below the minimum of 4")));
            }
            if let Some(m) = self.measurement_dim {
                if let Some(n) = dims.iter().find(|n| **n != m + 2) {
                    return Err(Error::Config(format!("`measurement_dim` = {m} but graph scenarios need N−2 = {}", n - 2)));
                }
            }
        }
        if self.horizons().contains(&0) {
            return Err(Error::Config("`horizons` entries must be positive".into()));
        }
        if self.particles().contains(&0) {
            return Err(Error::Config("`particles` entries must be positive".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("`seeds` must be positive".into()));
        }
        if self.inner == 0 {
            return Err(Error::Config("`inner` must be positive".into()));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("`snr_db` must be finite".into()));
        }
        if !(self.threshold_ratio > 0.0 && self.threshold_ratio <= 1.0) {
            return Err(Error::Config(format!("`threshold_ratio` = {} outside (0, 1]", self.threshold_ratio)));
        }
        let registry = Registry::default();
        for p in self.proposals() {
            registry.get(&p).map_err(|e| Error::Config(format!("`proposals`: {e}")))?;
        }
        if self.scenario == Scenario::Sir && self.proposals().iter().any(|p| p == "gnn") {
            return Err(Error::Config("`proposals`: the graph network needs a graph scenario".into()));
        }
        self.train.validate().map_err(|e| Error::Config(format!("[train]: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads, validates and completes a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    ExperimentConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}
