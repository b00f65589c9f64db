//! Hyperparameters. Everything the architecture leaves open lives here so a
//! checkpoint can snapshot it and a TOML file can override it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the state-space token mixer evaluates its sequence map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SsmMode {
    #[default]
    Scan,
    Convolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Stage-1 width `C`; stages widen to 2C, 4C, 8C.
    pub channels: usize,
    /// Common fused width `C_f`.
    pub fused_channels: usize,
    /// Text embedding width `C_T`.
    pub text_dim: usize,
    /// Hash buckets of the toy text encoder.
    pub vocab_buckets: usize,
    pub text_seed: u64,
    /// SSM state size `N`.
    pub state_dim: usize,
    /// Blocks per stage.
    pub depths: [usize; 4],
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Width of the short causal conv inside the token mixer.
    pub mixer_conv_width: usize,
    pub ssm_mode: SsmMode,
    /// Log-uniform range for the initial SSM step size.
    pub dt_min: f64,
    pub dt_max: f64,
    pub head_hidden: usize,
    /// Maximum gripper opening in pixels.
    pub w_max: f64,
    /// Peak threshold on the quality map.
    pub quality_threshold: f64,
    /// Gaussian blur applied to the quality map before peak picking.
    pub quality_blur_sigma: f64,
    pub fusion: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 8,
            fused_channels: 8,
            text_dim: 64,
            vocab_buckets: 4096,
            text_seed: 0x5eed_7e47,
            state_dim: 8,
            depths: [1, 1, 2, 2],
            heads: 2,
            mlp_ratio: 2,
            mixer_conv_width: 3,
            ssm_mode: SsmMode::Scan,
            dt_min: 1e-3,
            dt_max: 1e-1,
            head_hidden: 16,
            w_max: 150.0,
            quality_threshold: 0.3,
            quality_blur_sigma: 2.0,
            fusion: true,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Smallest configuration used by the gradient checks (C = 4, N = 4).
    pub fn tiny() -> Self {
        ModelConfig {
            channels: 4,
            fused_channels: 4,
            text_dim: 8,
            vocab_buckets: 64,
            state_dim: 4,
            head_hidden: 8,
            w_max: 24.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("fused_channels", self.fused_channels),
            ("text_dim", self.text_dim),
            ("vocab_buckets", self.vocab_buckets),
            ("state_dim", self.state_dim),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("mixer_conv_width", self.mixer_conv_width),
            ("head_hidden", self.head_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::arg(format!("{name} must be positive")));
            }
        }
        let d3 = 4 * self.channels;
        if d3 % 2 != 0 || d3 % self.heads != 0 || (2 * d3) % self.heads != 0 {
            return Err(Error::arg(format!(
                "token width {d3} must be even and divisible by {} heads",
                self.heads
            )));
        }
        if !(self.dt_min > 0.0 && self.dt_max >= self.dt_min) {
            return Err(Error::arg("need 0 < dt_min <= dt_max"));
        }
        if !(self.w_max > 0.0) || !(0.0..1.0).contains(&self.quality_threshold) {
            return Err(Error::arg("w_max must be positive and quality_threshold in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Heavy-ball momentum: `v = μv + g`, `p -= lr·v`.
    #[default]
    Sgd,
    /// Bias-corrected Adam with `β1 = momentum`.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Cosine decay of the learning rate to zero over the run.
    pub cosine_decay: bool,
    /// Global-norm gradient clip; `0` disables.
    pub grad_clip: f64,
    /// Adam second-moment decay.
    pub beta2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-2,
            momentum: 0.9,
            cosine_decay: true,
            optimizer: Optimizer::Sgd,
            grad_clip: 0.0,
            beta2: 0.999,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("learning_rate must be >= 0 and momentum in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::arg("beta2 must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Contents of a `--config` file: `[model]` and `[train]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}
