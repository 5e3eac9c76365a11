//! Experiment configuration (TOML) and its resolution into runtime objects.

use crate::constitutive::SolverSettings;
use crate::driver::LoadingProgram;
use crate::error::{Error, Result};
use crate::potentials::{Framework, PhenomenologicalParams, PotentialSet};
use crate::training::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub framework: String,
    #[serde(default = "default_n_back")]
    pub n_back: usize,
    #[serde(default = "default_stress_scale")]
    pub stress_scale: f64,
    #[serde(default = "default_strain_scale")]
    pub strain_scale: f64,
    #[serde(default = "default_true")]
    pub y0_trainable: bool,
    #[serde(default)]
    pub elastic_trainable: bool,
    pub params: PhenomenologicalParams,
    #[serde(default)]
    pub net: NetConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: vec![8, 8],
            init_std: 0.4,
            seed: 0,
        }
    }
}

fn default_n_back() -> usize {
    1
}
fn default_stress_scale() -> f64 {
    0.1
}
fn default_strain_scale() -> f64 {
    0.01
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_penalty")]
    pub penalty_factor: f64,
    /// fraction of the data used for fitting; the remainder is held out
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_epochs() -> usize {
    200
}
fn default_lr() -> f64 {
    0.02
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_penalty() -> f64 {
    1e3
}
fn default_train_fraction() -> f64 {
    1.0
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: default_epochs(),
            lr: default_lr(),
            seeds: default_seeds(),
            penalty_factor: default_penalty(),
            train_fraction: default_train_fraction(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default = "default_program")]
    pub program: LoadingProgram,
    #[serde(default = "default_solver")]
    pub solver: SolverSettings,
    #[serde(default)]
    pub train: TrainSection,
    /// synthetic-data noise standard deviation (GPa)
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

fn default_program() -> LoadingProgram {
    LoadingProgram::default()
}

fn default_solver() -> SolverSettings {
    SolverSettings::default()
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        Framework::parse(&self.model.framework)?;
        self.model.params.validate()?;
        if self.model.n_back == 0 || self.model.n_back > 3 {
            return Err(Error::InvalidParameter(format!(
                "n_back must be 1..=3, got {}",
                self.model.n_back
            )));
        }
        if !(self.model.stress_scale > 0.0 && self.model.strain_scale > 0.0) {
            return Err(Error::InvalidParameter("scales must be positive".into()));
        }
        if !(self.train.train_fraction > 0.0 && self.train.train_fraction <= 1.0) {
            return Err(Error::InvalidParameter(
                "train_fraction must lie in (0, 1]".into(),
            ));
        }
        self.program.validate()
    }

    /// Build the potential set for `seed`; for network frameworks the seed
    /// picks the initialization, otherwise it is ignored.
    pub fn build_set(&self, seed: u64) -> Result<PotentialSet> {
        let framework = Framework::parse(&self.model.framework)?;
        let mut set = if framework.uses_dissipation_nets() {
            PotentialSet::with_networks(
                framework,
                self.model.params,
                seed,
                &self.model.net.hidden,
                self.model.net.init_std,
            )?
        } else {
            PotentialSet::phenomenological(framework, self.model.params)?
        };
        set.n_back = self.model.n_back;
        set.stress_scale = self.model.stress_scale;
        set.strain_scale = self.model.strain_scale;
        set.set_trainable("y0", self.model.y0_trainable);
        set.set_trainable("g", self.model.elastic_trainable);
        set.set_trainable("k_bulk", self.model.elastic_trainable);
        Ok(set)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            lr: self.train.lr,
            penalty_factor: self.train.penalty_factor,
        }
    }

    /// Serialize the fully resolved configuration (defaults filled in).
    pub fn snapshot(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.snapshot()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
framework = "AF"

[model.params]
g = 26.0
k_bulk = 56.0
y0 = 0.3
h_iso = 2.0
h_kin = 5.0
r_sat = 0.2
gamma = 10.0
m_kin_inf = 0.1
ow_m = 2.0
delta = 0.5
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg: ExperimentConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.model.n_back, 1);
        assert_eq!(cfg.program.cycles, 5);
        assert_eq!(cfg.train.epochs, 200);
        let set = cfg.build_set(0).unwrap();
        assert_eq!(set.framework, Framework::Af);
        assert!(set.phi_kin_net.is_none());
    }

    #[test]
    fn network_config_builds_nets_per_seed() {
        let text = MINIMAL.replace("framework = \"AF\"", "framework = \"4NN\"");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        let a = cfg.build_set(0).unwrap();
        let b = cfg.build_set(1).unwrap();
        assert!(a.phi_kin_net.is_some() && a.psi_kin_net.is_some());
        assert_ne!(a.flat_raw(), b.flat_raw());
        assert_eq!(cfg.build_set(0).unwrap().flat_raw(), a.flat_raw());
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg: ExperimentConfig = toml::from_str(MINIMAL).unwrap();
        let snap = cfg.snapshot().unwrap();
        let back: ExperimentConfig = toml::from_str(&snap).unwrap();
        assert_eq!(back.model.params.g, 26.0);
        assert_eq!(back.program.steps_per_branch, cfg.program.steps_per_branch);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let bad = MINIMAL.replace("framework = \"AF\"", "framework = \"XX\"");
        let cfg: ExperimentConfig = toml::from_str(&bad).unwrap();
        assert!(cfg.validate().is_err());
        let bad = MINIMAL.replace("y0 = 0.3", "y0 = -1.0");
        let cfg: ExperimentConfig = toml::from_str(&bad).unwrap();
        assert!(cfg.validate().is_err());
        assert!(toml::from_str::<ExperimentConfig>("[model]\nframework = \"AF\"\nbogus = 1\n")
            .is_err());
    }
}
