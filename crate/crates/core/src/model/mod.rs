//! GPRFormer: a compact transformer regressing along-track displacement from
//! a window of conditioned GPR traces, with its own autodiff, Adam training
//! loop, checkpoint format and ablation harness.

mod ablation;
mod augment;
mod checkpoint;
mod data;
mod gprformer;
mod params;
mod tape;
mod tensor;
mod train;

pub use ablation::{ablation_sweep, AblationAxis, AblationData, AblationRow, DataRequest};
pub use augment::Augmentation;
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use data::{build_windows, filtered_window, window_starts, LabeledWindow, WindowSet};
pub use gprformer::{mse, GradientCheck, ModelParams, Normalization};
pub use params::{Grads, ParamId, ParamStore};
pub use tape::{NodeId, Tape};
pub use tensor::Mat;
pub use train::{evaluate_rmse_mm, predict_windows, train, train_from, EpochLog, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the pooled sequence representation is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Learnable blend of post- and pre-transformer attention pooling.
    Dual,
    /// Post-transformer attention pooling only.
    PostOnly,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub token_dim: usize,
    pub window_k: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_ratio: f64,
    pub dropout_p: f64,
    pub alpha_init: f64,
    /// Hidden width of the regression head.
    pub head_dim: usize,
    pub pooling: Pooling,
    /// When false, traces are used as tokens directly (`token_dim == input_dim`).
    pub linear_encoder: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 200,
            token_dim: 256,
            window_k: 10,
            layers: 6,
            heads: 4,
            ffn_ratio: 3.0,
            dropout_p: 0.1,
            alpha_init: 0.5,
            head_dim: 128,
            pooling: Pooling::Dual,
            linear_encoder: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for finite-difference gradient checks.
    pub fn reduced() -> Self {
        Self { input_dim: 20, token_dim: 16, window_k: 4, layers: 2, heads: 2, head_dim: 8, ..Self::default() }
    }

    pub fn ffn_dim(&self) -> usize {
        ((self.token_dim as f64) * self.ffn_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.token_dim == 0 || self.head_dim == 0 {
            return Err(Error::config("input_dim, token_dim and head_dim must be positive"));
        }
        if self.heads == 0 || !self.token_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "token_dim {} must be divisible by heads {}",
                self.token_dim, self.heads
            )));
        }
        if self.window_k == 0 {
            return Err(Error::config("window_k must be at least 1"));
        }
        if self.layers == 0 {
            return Err(Error::config("layers must be at least 1"));
        }
        if !(self.ffn_ratio > 0.0) || self.ffn_dim() == 0 {
            return Err(Error::config("ffn_ratio must give a positive hidden width"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config("dropout_p must lie in [0, 1)"));
        }
        if !self.alpha_init.is_finite() {
            return Err(Error::config("alpha_init must be finite"));
        }
        if !self.linear_encoder && self.token_dim != self.input_dim {
            return Err(Error::config("without the linear encoder token_dim must equal input_dim"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::reduced().validate().unwrap();
        let bad = |f: fn(&mut ModelConfig)| {
            let mut c = ModelConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.heads = 3));
        assert!(bad(|c| c.window_k = 0));
        assert!(bad(|c| c.dropout_p = 1.0));
        assert!(bad(|c| c.linear_encoder = false));
        assert_eq!(ModelConfig::default().ffn_dim(), 768);
    }

    #[test]
    fn config_toml_round_trip() {
        let mut c = ModelConfig::reduced();
        c.pooling = Pooling::PostOnly;
        assert_eq!(ModelConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        assert!(ModelConfig::from_toml_str("heads = 5\n").is_err());
    }
}
