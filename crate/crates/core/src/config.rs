//! Versioned application configuration: one TOML file drives data
//! generation, training, evaluation and the benchmark comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{RhConfig, RuleBasedConfig, WorkingHours};
use crate::env::{RewardSpec, SoftWeights};
use crate::error::{CoreError, Result};
use crate::forecast::{CampusLoadParams, LagRegressionConfig};
use crate::oracle::OracleConfig;
use crate::plant::{ConstraintId, ConstraintTolerances, PlantConfig};
use crate::ppo::train::PpoConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Reward section as written in config files; resolved against the plant
/// into a full [`RewardSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub hard_order: Vec<String>,
    pub lambda: Vec<f64>,
    pub soft: SoftWeights,
    pub power_scale_kw: f64,
    pub tolerances: ConstraintTolerances,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            hard_order: vec!["energy_balance".into(), "t_return_range".into()],
            lambda: vec![10.0, 10.0],
            soft: SoftWeights::default(),
            power_scale_kw: 1000.0,
            tolerances: ConstraintTolerances::default(),
        }
    }
}

impl RewardConfig {
    pub fn resolve(&self, plant: &PlantConfig) -> Result<RewardSpec> {
        let hard_order = self
            .hard_order
            .iter()
            .map(|s| ConstraintId::parse(s))
            .collect::<Result<Vec<_>>>()?;
        let mut spec = RewardSpec::for_plant(plant);
        spec.hard_order = hard_order;
        spec.lambda = self.lambda.clone();
        spec.soft = self.soft;
        spec.power_scale_kw = self.power_scale_kw;
        spec.tolerances = self.tolerances;
        spec.validate()?;
        Ok(spec)
    }
}

/// Synthetic trace layout: a fit span for the forecaster, a training span
/// for the RL agents, and a held-out evaluation span, each preceded by
/// enough warm-up history for the forecaster window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub train_seed: u64,
    pub eval_seed: u64,
    pub fit_days: usize,
    pub train_days: usize,
    pub eval_days: usize,
    /// Days of history prepended to each span for forecaster warm-up.
    pub warmup_days: usize,
    pub params: CampusLoadParams,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            train_seed: 2024,
            eval_seed: 4048,
            fit_days: 28,
            train_days: 56,
            eval_days: 60,
            warmup_days: 7,
            params: CampusLoadParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub ppo: PpoConfig,
    pub total_steps: usize,
    /// Episode length in steps during training.
    pub episode_len: usize,
    /// Forecast-window length of the receding-horizon observation.
    pub horizon: usize,
    pub perfect_foresight: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            ppo: PpoConfig::default(),
            total_steps: 220_000,
            episode_len: 96,
            horizon: 48,
            perfect_foresight: false,
        }
    }
}

/// Reference energies reported alongside the benchmark for context. These
/// come from the original field deployment this framework mirrors and are
/// not reproducible from synthetic traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceEnergies {
    pub rule_based_mwh: f64,
    pub one_step_rl_mwh: f64,
    pub receding_horizon_rl_mwh: f64,
    pub note: String,
}

impl Default for ReferenceEnergies {
    fn default() -> Self {
        ReferenceEnergies {
            rule_based_mwh: 92.35,
            one_step_rl_mwh: 74.15,
            receding_horizon_rl_mwh: 66.49,
            note: "field-study reference over a two-month period; the one-step figure is \
                   quoted as 74.35 MWh in some summaries of the same study"
                .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSection {
    pub reference: ReferenceEnergies,
    /// Forecast NMAE reference from the same field study.
    pub reference_forecast_nmae: f64,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            reference: ReferenceEnergies::default(),
            reference_forecast_nmae: 0.235,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub version: u32,
    pub seed: u64,
    pub plant: PlantConfig,
    pub reward: RewardConfig,
    pub oracle: OracleConfig,
    pub rule_based: RuleBasedConfig,
    pub rh: RhConfig,
    pub forecast: LagRegressionConfig,
    pub trace: TraceConfig,
    pub train: TrainSection,
    pub benchmark: BenchmarkSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            version: CONFIG_VERSION,
            seed: 17,
            plant: PlantConfig::campus(),
            reward: RewardConfig::default(),
            oracle: OracleConfig::default(),
            rule_based: RuleBasedConfig::default(),
            rh: RhConfig::default(),
            forecast: LagRegressionConfig::default(),
            trace: TraceConfig::default(),
            train: TrainSection::default(),
            benchmark: BenchmarkSection::default(),
        }
    }
}

impl AppConfig {
    /// The configuration used by the shipped benchmark: the four-chiller
    /// campus plant against a deliberately conservative baseline that keeps
    /// two machines staged around the clock and stages early, mirroring
    /// redundancy-first site practice. The small chiller is staged last
    /// because its fitted power curve is only trusted below its COP cap,
    /// which its normal operating range never satisfies.
    pub fn benchmark_default() -> Self {
        let mut cfg = AppConfig::default();
        cfg.rule_based = RuleBasedConfig {
            staging_order: vec![1, 2, 3, 4],
            stage_up_frac: 0.75,
            stage_down_frac: 0.40,
            reaction_lag_steps: 1,
            working_hours: Some(WorkingHours {
                start_slot: 14,
                end_slot: 38,
                min_on: 2,
            }),
            min_on_base: 2,
            design_delta_t_c: 5.0,
            idle_off_kw: 1.0,
        };
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CoreError::config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.plant.validate()?;
        self.reward.resolve(&self.plant)?;
        self.rule_based.validate(&self.plant)?;
        self.rh.validate()?;
        self.train.ppo.validate()?;
        if self.trace.eval_days == 0 || self.trace.train_days == 0 {
            return Err(CoreError::config("trace spans must be non-empty"));
        }
        if self.trace.warmup_days * crate::forecast::STEPS_PER_DAY < self.forecast.window {
            return Err(CoreError::config(
                "warmup_days too short for the forecaster window",
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: AppConfig =
            toml::from_str(&text).map_err(|e| CoreError::config(format!("{path:?}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string_pretty(self).map_err(|e| CoreError::Serde(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Canonical TOML rendering used for hashing and reproducibility checks.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::Serde(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = AppConfig::benchmark_default();
        cfg.validate().unwrap();
        let text = cfg.canonical_toml().unwrap();
        let back: AppConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn reward_config_resolves_hard_order() {
        let cfg = AppConfig::default();
        let spec = cfg.reward.resolve(&cfg.plant).unwrap();
        assert_eq!(spec.hard_order.len(), 2);
        assert_eq!(spec.hard_order[0], ConstraintId::EnergyBalance);
        assert_eq!(spec.temp_scale_c, 14.0 - 6.56);
    }

    #[test]
    fn bad_constraint_name_is_config_error() {
        let mut cfg = AppConfig::default();
        cfg.reward.hard_order = vec!["energy".into()];
        cfg.reward.lambda = vec![10.0];
        assert!(matches!(cfg.validate(), Err(CoreError::Config(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        let cfg = AppConfig::benchmark_default();
        cfg.save(&path).unwrap();
        let loaded = AppConfig::load(&path).unwrap();
        assert_eq!(cfg, loaded);
    }
}
