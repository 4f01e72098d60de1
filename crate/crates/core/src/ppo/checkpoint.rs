//! Policy checkpoints: architecture descriptor, parameter arrays and the
//! frozen observation-normalization statistics, dumped as versioned JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ppo::nn::{GaussianPolicy, Mlp, RunningNorm};
use crate::ppo::train::PpoConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    /// Forecast-window length baked into the observation layout.
    pub horizon: usize,
    pub n_chillers: usize,
    pub pi_sizes: Vec<usize>,
    pub pi_params: Vec<f64>,
    pub log_std: Vec<f64>,
    pub vf_sizes: Vec<usize>,
    pub vf_params: Vec<f64>,
    pub obs_norm: RunningNorm,
    pub trained_steps: usize,
    pub config: PpoConfig,
}

impl Checkpoint {
    pub fn from_parts(
        policy: &GaussianPolicy,
        value: &Mlp,
        obs_norm: &RunningNorm,
        horizon: usize,
        n_chillers: usize,
        trained_steps: usize,
        config: &PpoConfig,
    ) -> Self {
        let mut frozen = obs_norm.clone();
        frozen.frozen = true;
        Checkpoint {
            version: CHECKPOINT_VERSION,
            obs_dim: policy.mlp.in_dim(),
            act_dim: policy.act_dim(),
            hidden: config.hidden.clone(),
            horizon,
            n_chillers,
            pi_sizes: policy.mlp.sizes.clone(),
            pi_params: policy.mlp.params.clone(),
            log_std: policy.log_std.clone(),
            vf_sizes: value.sizes.clone(),
            vf_params: value.params.clone(),
            obs_norm: frozen,
            trained_steps,
            config: config.clone(),
        }
    }

    pub fn policy(&self) -> GaussianPolicy {
        GaussianPolicy {
            mlp: Mlp {
                sizes: self.pi_sizes.clone(),
                params: self.pi_params.clone(),
            },
            log_std: self.log_std.clone(),
        }
    }

    pub fn value(&self) -> Mlp {
        Mlp {
            sizes: self.vf_sizes.clone(),
            params: self.vf_params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| CoreError::Serde(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| CoreError::Serde(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CoreError::config(format!(
                "checkpoint version {} unsupported (expected {})",
                ckpt.version, CHECKPOINT_VERSION
            )));
        }
        if ckpt.pi_params.len() != Mlp::param_count(&ckpt.pi_sizes)
            || ckpt.vf_params.len() != Mlp::param_count(&ckpt.vf_sizes)
        {
            return Err(CoreError::config("checkpoint parameter sizes corrupt"));
        }
        Ok(ckpt)
    }
}
