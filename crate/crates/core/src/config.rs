//! JSON run configuration: simulator, model, training and evaluation sections.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SimSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{Protocol, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Any of `full`, `imputed_50`, `multi_step[:H]`.
    pub protocols: Vec<String>,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { protocols: vec!["full".into(), "imputed_50".into(), "multi_step:50".into()], batch_size: 64 }
    }
}

impl EvalConfig {
    pub fn parsed(&self) -> Result<Vec<Protocol>> {
        self.protocols.iter().map(|p| p.parse()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sim: SimSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// Named starting points for `print-config --preset`.
pub const PRESETS: [&str; 3] = ["default", "benchmark", "smoke"];

impl RunConfig {
    /// Desk-scale spring-mass benchmark sized to train in a few minutes on one core.
    pub fn benchmark() -> Self {
        let mut sim = SimSpec { dt: 0.1, traj_len: 800, segment_len: 400, obs_noise_std: 1e-3, ..SimSpec::default() };
        sim.n_traj = 50;
        sim.n_train = 40;
        let model = ModelConfig {
            latent_obs_dim: 8,
            latent_state_dim: 16,
            // Only the stiffness varies. Wider task latents also pick up the
            // per-window equilibrium offset, which the loss barely penalizes.
            task_dim: 1,
            num_basis: 8,
            task_bases: 8,
            obs_encoder_hidden: 48,
            context_encoder_hidden: 64,
            decoder_hidden: 48,
            control_hidden: vec![48],
            task_hidden: 48,
            np_hidden: vec![64, 64],
            context_size: 100,
            ..ModelConfig::default()
        };
        let train = TrainConfig { lr: 3e-3, batch_size: 8, epochs: 100, eval_every: 0, ..TrainConfig::default() };
        Self { sim, model, train, eval: EvalConfig::default() }
    }

    /// Tiny configuration for smoke tests and examples.
    pub fn smoke() -> Self {
        let mut c = Self::benchmark();
        c.sim.n_traj = 10;
        c.sim.n_train = 8;
        c.sim.traj_len = 200;
        c.sim.segment_len = 100;
        c.model.context_size = 25;
        c.model.latent_obs_dim = 4;
        c.model.latent_state_dim = 8;
        c.model.task_dim = 8;
        c.model.num_basis = 4;
        c.model.task_bases = 4;
        c.train.epochs = 5;
        c.eval.protocols = vec!["full".into(), "imputed_50".into(), "multi_step:10".into()];
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "benchmark" => Ok(Self::benchmark()),
            "smoke" => Ok(Self::smoke()),
            other => Err(Error::Config(format!("unknown preset '{other}' ({})", PRESETS.join(" | ")))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Copies observation/action sizes from the simulator into the model
    /// section and checks every cross-field constraint.
    pub fn resolve(&mut self) -> Result<()> {
        self.model.obs_dim = self.sim.system.obs_dim();
        self.model.action_dim = self.sim.system.action_dim();
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.parsed()?;
        if self.eval.batch_size == 0 {
            return Err(Error::Config("eval.batch_size must be positive".into()));
        }
        if self.sim.traj_len < 2 * self.model.context_size {
            return Err(Error::Config(format!(
                "sim.traj_len ({}) must be at least 2 * model.context_size ({})",
                self.sim.traj_len, self.model.context_size
            )));
        }
        if self.model.obs_dim != self.sim.system.obs_dim() || self.model.action_dim != self.sim.system.action_dim() {
            return Err(Error::Config(format!(
                "model.obs_dim / model.action_dim ({}, {}) do not match sim.system ({}, {})",
                self.model.obs_dim,
                self.model.action_dim,
                self.sim.system.obs_dim(),
                self.sim.system.action_dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip() {
        for name in PRESETS {
            let c = RunConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"sim": {"dt": 0.1, "bogus": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"extra": {}}"#).is_err());
        let c = RunConfig::from_json(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.model, ModelConfig::default());
    }

    #[test]
    fn cross_field_checks() {
        let mut c = RunConfig::default();
        c.model.context_size = 500;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig { sim: SimSpec::pendulum(), ..RunConfig::default() };
        assert!(c.validate().is_err());
        c.resolve().unwrap();
        assert_eq!(c.model.obs_dim, 2);
    }
}
