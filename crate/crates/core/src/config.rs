//! Run configuration file. Every section rejects unknown keys.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyConfig;
use crate::error::{Error, Result};
use crate::langevin::LangevinConfig;
use crate::losses::LossConfig;
use crate::pipeline::base::BaseConfig;
use crate::pipeline::task::TaskConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_base: usize,
    pub d_asst: usize,
    pub n_thoughts: usize,
    pub energy_hidden: Vec<usize>,
    pub energy_position_dim: usize,
    pub base_ff_hidden: usize,
    /// Standard deviation of the initial projection weights.
    pub projection_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_base: 32,
            d_asst: 16,
            n_thoughts: 4,
            energy_hidden: vec![64, 32],
            energy_position_dim: 8,
            base_ff_hidden: 128,
            projection_init_std: 0.05,
        }
    }
}

/// How the language-model loss reaches the energy parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackpropMode {
    /// Right-to-left product with Hessian-vector products.
    #[default]
    UnrollClosedForm,
    /// Reverse mode over the whole chain on one tape.
    UnrollAutodiff,
    /// No chain gradient; the energy learns from its own loss only.
    Detached,
}

/// Update rule for the projection and energy parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub backprop_mode: BackpropMode,
    /// Compare closed-form and autodiff chain gradients every this many steps.
    pub audit_every: usize,
    pub pretrain_epochs: usize,
    pub pretrain_batch_size: usize,
    pub pretrain_learning_rate: f64,
    pub pretrain_target_accuracy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 4,
            learning_rate: 0.05,
            optimizer: Optimizer::Sgd,
            backprop_mode: BackpropMode::UnrollClosedForm,
            audit_every: 50,
            pretrain_epochs: 60,
            pretrain_batch_size: 16,
            pretrain_learning_rate: 0.003,
            pretrain_target_accuracy: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_chains: usize,
    pub decode_temperature: f64,
    /// Keep Langevin noise on at inference time.
    pub inference_noise: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_chains: 10,
            decode_temperature: 0.7,
            inference_noise: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub langevin: LangevinConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.task.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.langevin.validate()?;
        self.loss.validate()?;
        let m = &self.model;
        if m.d_base == 0 || m.d_asst == 0 || m.n_thoughts == 0 || m.base_ff_hidden == 0 || m.energy_position_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if m.energy_hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("energy_hidden widths must be positive".into()));
        }
        if !(m.projection_init_std >= 0.0) {
            return Err(Error::Config("projection_init_std must be nonnegative".into()));
        }
        let t = &self.train;
        if t.batch_size == 0 || t.pretrain_batch_size == 0 || t.audit_every == 0 {
            return Err(Error::Config("batch sizes and audit_every must be positive".into()));
        }
        if !(t.learning_rate > 0.0) || !(t.pretrain_learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&t.pretrain_target_accuracy) {
            return Err(Error::Config("pretrain_target_accuracy must lie in [0, 1]".into()));
        }
        let e = &self.eval;
        if e.n_chains == 0 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        if !(e.decode_temperature >= 0.0) || !e.decode_temperature.is_finite() {
            return Err(Error::Config("decode_temperature must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn base_config(&self) -> BaseConfig {
        BaseConfig {
            modulus: self.task.modulus,
            d_model: self.model.d_base,
            ff_hidden: self.model.base_ff_hidden,
            max_ops: self.task.max_operations(),
            n_thoughts: self.model.n_thoughts,
        }
    }

    pub fn energy_config(&self) -> EnergyConfig {
        EnergyConfig {
            context_dim: self.model.d_base,
            latent_dim: self.model.d_base,
            position_dim: self.model.energy_position_dim,
            hidden: self.model.energy_hidden.clone(),
            max_thoughts: self.model.n_thoughts,
            temperature: 1.0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate().map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json().unwrap()).unwrap();
        v["train"]["learning_rat"] = serde_json::json!(0.1);
        assert!(matches!(RunConfig::from_json(&v.to_string()), Err(Error::Config(_))));
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json().unwrap()).unwrap();
        v["extra"] = serde_json::json!({});
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = RunConfig::default();
        cfg.eval.n_chains = 0;
        assert!(RunConfig::from_json(&cfg.to_json().unwrap()).is_err());
        let mut cfg = RunConfig::default();
        cfg.loss.margin = -1.0;
        assert!(RunConfig::from_json(&cfg.to_json().unwrap()).is_err());
    }

    #[test]
    fn backprop_mode_names() {
        let s = serde_json::to_string(&BackpropMode::UnrollClosedForm).unwrap();
        assert_eq!(s, "\"unroll_closed_form\"");
        let m: BackpropMode = serde_json::from_str("\"detached\"").unwrap();
        assert_eq!(m, BackpropMode::Detached);
    }
}
