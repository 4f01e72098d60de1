//! The benchmarked control policies: the reactive rule-based baseline and
//! the two RL controllers (one-step and receding-horizon). Both RL variants
//! share one policy-evaluation path and differ only in how the observation
//! is assembled.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{build_observation, ObsLayout};
use crate::error::{CoreError, Result};
use crate::forecast::{ExogSeries, Forecast, ForecastRequest, Forecaster, STEPS_PER_DAY};
use crate::plant::{ChillerAction, PlantConfig, PlantTelemetry};
use crate::ppo::{Checkpoint, GaussianPolicy, RunningNorm};

/// Minimum staged chillers inside a daily slot window. Models the common
/// operator practice of keeping spare machines online for redundancy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkingHours {
    /// First half-hour slot of the window (inclusive).
    pub start_slot: usize,
    /// End slot (exclusive).
    pub end_slot: usize,
    pub min_on: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleBasedConfig {
    /// Chiller ids in the order they are staged on.
    pub staging_order: Vec<u8>,
    /// Stage up when the load exceeds this fraction of staged capacity.
    pub stage_up_frac: f64,
    /// Stage down when the load falls below this fraction of the capacity
    /// left after removing the last stage.
    pub stage_down_frac: f64,
    /// The controller reacts to the load observed this many steps ago.
    pub reaction_lag_steps: usize,
    /// Optional scheduled minimum during a daily window.
    pub working_hours: Option<WorkingHours>,
    /// Minimum staged chillers around the clock (when load is non-idle).
    pub min_on_base: usize,
    /// Loop temperature rise the flow law is sized for.
    pub design_delta_t_c: f64,
    /// Below this load everything shuts down.
    pub idle_off_kw: f64,
}

impl Default for RuleBasedConfig {
    fn default() -> Self {
        RuleBasedConfig {
            staging_order: vec![4, 1, 2, 3],
            stage_up_frac: 0.9,
            stage_down_frac: 0.5,
            reaction_lag_steps: 1,
            working_hours: None,
            min_on_base: 1,
            design_delta_t_c: 5.0,
            idle_off_kw: 1.0,
        }
    }
}

impl RuleBasedConfig {
    pub fn validate(&self, plant: &PlantConfig) -> Result<()> {
        if !(self.stage_up_frac > 0.0 && self.stage_up_frac < 1.0) {
            return Err(CoreError::config("stage_up_frac must be in (0, 1)"));
        }
        if !(self.stage_down_frac > 0.0 && self.stage_down_frac < self.stage_up_frac) {
            return Err(CoreError::config(
                "stage_down_frac must be in (0, stage_up_frac) for hysteresis",
            ));
        }
        if self.staging_order.is_empty() || self.staging_order.len() > plant.n_chillers() {
            return Err(CoreError::config("staging order size mismatch"));
        }
        for id in &self.staging_order {
            if !plant.chillers.iter().any(|c| c.id == *id) {
                return Err(CoreError::config(format!("staging order names unknown chiller {id}")));
            }
        }
        if !(self.design_delta_t_c > 0.0) {
            return Err(CoreError::config("design_delta_t_c must be positive"));
        }
        Ok(())
    }
}

/// Reactive threshold-staging baseline. Stages chillers in a fixed order
/// against hysteresis thresholds on the recently observed load, and sets
/// every ON chiller to the same fraction of its flow range so the bank's
/// flow matches the load at the design temperature rise.
pub struct RuleBasedController {
    cfg: RuleBasedConfig,
    /// Chiller indices (into the plant list) in staging order.
    order: Vec<usize>,
    staged: usize,
    load_history: VecDeque<f64>,
}

impl RuleBasedController {
    pub fn new(cfg: RuleBasedConfig, plant: &PlantConfig) -> Result<Self> {
        cfg.validate(plant)?;
        let order = cfg
            .staging_order
            .iter()
            .map(|id| {
                plant
                    .chillers
                    .iter()
                    .position(|c| c.id == *id)
                    .expect("validated above")
            })
            .collect();
        Ok(RuleBasedController {
            cfg,
            order,
            staged: 0,
            load_history: VecDeque::new(),
        })
    }

    pub fn reset(&mut self) {
        self.staged = 0;
        self.load_history.clear();
    }

    fn capacity_of(&self, plant: &PlantConfig, k: usize) -> f64 {
        self.order[..k]
            .iter()
            .map(|&i| plant.chillers[i].rated_kw)
            .sum()
    }

    fn min_on_now(&self, slot_of_day: usize) -> usize {
        let mut min_on = self.cfg.min_on_base;
        if let Some(wh) = &self.cfg.working_hours {
            if slot_of_day >= wh.start_slot && slot_of_day < wh.end_slot {
                min_on = min_on.max(wh.min_on);
            }
        }
        min_on.min(self.order.len())
    }

    /// Decide the action for the current step. `observed_load_kw` is the
    /// newest load measurement available (the previous step's load when
    /// driven in real time); with the default lag of one step the controller
    /// reacts to it directly, larger lags delay the reaction further.
    pub fn step(
        &mut self,
        plant: &PlantConfig,
        observed_load_kw: f64,
        step_index: usize,
    ) -> ChillerAction {
        let delay = self.cfg.reaction_lag_steps.saturating_sub(1);
        self.load_history.push_back(observed_load_kw.max(0.0));
        if self.load_history.len() > delay + 1 {
            self.load_history.pop_front();
        }
        let load = *self.load_history.front().unwrap();
        let slot = step_index % STEPS_PER_DAY;

        if load < self.cfg.idle_off_kw {
            self.staged = 0;
            return ChillerAction::all_off(plant.n_chillers());
        }

        while self.staged < self.order.len()
            && load > self.cfg.stage_up_frac * self.capacity_of(plant, self.staged)
        {
            self.staged += 1;
        }
        let min_on = self.min_on_now(slot).max(1);
        while self.staged > min_on
            && load < self.cfg.stage_down_frac * self.capacity_of(plant, self.staged - 1)
        {
            self.staged -= 1;
        }
        self.staged = self.staged.max(min_on);

        // Same-fraction flow law: total flow tracks the load at the design
        // temperature rise, clamped to the bank's envelope.
        let on: Vec<usize> = self.order[..self.staged].to_vec();
        let fmin: f64 = on.iter().map(|&i| plant.chillers[i].flow_min_kgs).sum();
        let fmax: f64 = on.iter().map(|&i| plant.chillers[i].flow_max_kgs).sum();
        let wanted = load / (plant.c_w * self.cfg.design_delta_t_c);
        let phi = if fmax > fmin {
            ((wanted - fmin) / (fmax - fmin)).clamp(0.0, 1.0)
        } else {
            0.0
        };

        let mut flows = vec![0.0; plant.n_chillers()];
        for &i in &on {
            let ch = &plant.chillers[i];
            flows[i] = ch.flow_min_kgs + phi * (ch.flow_max_kgs - ch.flow_min_kgs);
        }
        ChillerAction::from_flows(flows)
    }

    pub fn staged_count(&self) -> usize {
        self.staged
    }
}

/// Shared deterministic policy evaluation used by both RL controllers.
pub struct PolicyController {
    pub policy: GaussianPolicy,
    pub obs_norm: RunningNorm,
    pub layout: ObsLayout,
}

impl PolicyController {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Self {
        let mut obs_norm = ckpt.obs_norm.clone();
        obs_norm.frozen = true;
        PolicyController {
            policy: ckpt.policy(),
            obs_norm,
            layout: ObsLayout {
                n_chillers: ckpt.n_chillers,
                horizon: ckpt.horizon,
            },
        }
    }

    /// Deterministic action (squashed policy mean) for an observation
    /// assembled by the caller.
    pub fn act(&self, plant: &PlantConfig, obs_channels: &ObsInputs) -> Result<Vec<f64>> {
        let obs = build_observation(
            plant,
            &self.layout,
            obs_channels.forecast_kw,
            obs_channels.telemetry,
            obs_channels.prev_on,
        );
        if obs.len() != self.policy.mlp.in_dim() {
            return Err(CoreError::contract(format!(
                "observation dim {} does not match policy input {}",
                obs.len(),
                self.policy.mlp.in_dim()
            )));
        }
        let normalized = self.obs_norm.normalize(&obs);
        Ok(self.policy.deterministic_action(&normalized))
    }
}

/// Observation ingredients supplied by the evaluation driver.
pub struct ObsInputs<'a> {
    pub forecast_kw: &'a [f64],
    pub telemetry: Option<&'a PlantTelemetry>,
    pub prev_on: &'a [bool],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RhConfig {
    pub forecaster_id: String,
    pub horizon: usize,
    pub replan_interval: usize,
}

impl Default for RhConfig {
    fn default() -> Self {
        RhConfig {
            forecaster_id: "lag_regression".into(),
            horizon: 48,
            replan_interval: 1,
        }
    }
}

impl RhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replan_interval == 0 || self.replan_interval > self.horizon {
            return Err(CoreError::config(
                "replan interval must lie in [1, horizon]",
            ));
        }
        Ok(())
    }
}

/// Receding-horizon policy controller: refreshes a load forecast every
/// replan interval, feeds the window into the policy observation, executes
/// only the current step's action. Falls back to the rule-based baseline
/// until enough history has accumulated.
pub struct RecedingHorizonController {
    pub cfg: RhConfig,
    policy: PolicyController,
    forecaster: Arc<dyn Forecaster>,
    fallback: RuleBasedController,
    history_load: VecDeque<f64>,
    history_exog: VecDeque<[f64; 5]>,
    window: usize,
    plan: Vec<f64>,
    plan_age: usize,
}

pub struct ControllerDecision {
    pub raw_action: Vec<f64>,
    pub fell_back: bool,
}

impl RecedingHorizonController {
    pub fn new(
        cfg: RhConfig,
        policy: PolicyController,
        forecaster: Arc<dyn Forecaster>,
        fallback: RuleBasedController,
    ) -> Result<Self> {
        cfg.validate()?;
        let window = forecaster.min_window();
        Ok(RecedingHorizonController {
            cfg,
            policy,
            forecaster,
            fallback,
            history_load: VecDeque::new(),
            history_exog: VecDeque::new(),
            window,
            plan: Vec::new(),
            plan_age: 0,
        })
    }

    /// Preload warm-up history (observations strictly before the first
    /// controlled step).
    pub fn warm_up(&mut self, loads: &[f64], exog: &ExogSeries) {
        for (t, &l) in loads.iter().enumerate() {
            self.push_observation(l, exog.channels_at(t));
        }
    }

    pub fn push_observation(&mut self, load_kw: f64, exog: [f64; 5]) {
        self.history_load.push_back(load_kw);
        self.history_exog.push_back(exog);
        while self.history_load.len() > self.window {
            self.history_load.pop_front();
            self.history_exog.pop_front();
        }
    }

    fn refresh_plan(&mut self, step_index: usize) -> Result<()> {
        let loads: Vec<f64> = self.history_load.iter().copied().collect();
        let exog = ExogSeries {
            wind_mps: self.history_exog.iter().map(|e| e[0]).collect(),
            wind_deg: self.history_exog.iter().map(|e| e[1]).collect(),
            temp_c: self.history_exog.iter().map(|e| e[2]).collect(),
            rh_pct: self.history_exog.iter().map(|e| e[3]).collect(),
            ghi_wm2: self.history_exog.iter().map(|e| e[4]).collect(),
        };
        let req = ForecastRequest {
            load_window: &loads,
            exog_window: &exog,
            horizon: self.cfg.horizon,
            first_step_of_day: step_index % STEPS_PER_DAY,
        };
        let Forecast { load_kw, .. } = self.forecaster.forecast(&req)?;
        self.plan = load_kw;
        self.plan_age = 0;
        Ok(())
    }

    /// Decide the action for step `step_index`. Requires `prev_on` and the
    /// previous telemetry from the evaluation loop.
    pub fn step(
        &mut self,
        plant: &PlantConfig,
        step_index: usize,
        recent_load_kw: f64,
        telemetry: Option<&PlantTelemetry>,
        prev_on: &[bool],
    ) -> Result<ControllerDecision> {
        if self.history_load.len() < self.window {
            let action = self.fallback.step(plant, recent_load_kw, step_index);
            let raw = action_to_raw(&action, plant);
            return Ok(ControllerDecision {
                raw_action: raw,
                fell_back: true,
            });
        }
        if self.plan.is_empty() || self.plan_age >= self.cfg.replan_interval {
            self.refresh_plan(step_index)?;
        }
        // Consume the plan from the current offset; pad the tail.
        let window: Vec<f64> = (0..self.policy.layout.horizon)
            .map(|h| {
                let idx = self.plan_age + h;
                self.plan
                    .get(idx)
                    .copied()
                    .unwrap_or_else(|| *self.plan.last().unwrap_or(&recent_load_kw))
            })
            .collect();
        let raw = self.policy.act(
            plant,
            &ObsInputs {
                forecast_kw: &window,
                telemetry,
                prev_on,
            },
        )?;
        self.plan_age += 1;
        Ok(ControllerDecision {
            raw_action: raw,
            fell_back: false,
        })
    }
}

/// One-step policy controller: identical evaluation path, but the forecast
/// channel is truncated to the single current-step prediction.
pub struct OneStepController {
    policy: PolicyController,
    forecaster: Arc<dyn Forecaster>,
    fallback: RuleBasedController,
    history_load: VecDeque<f64>,
    history_exog: VecDeque<[f64; 5]>,
    window: usize,
}

impl OneStepController {
    pub fn new(
        policy: PolicyController,
        forecaster: Arc<dyn Forecaster>,
        fallback: RuleBasedController,
    ) -> Self {
        let window = forecaster.min_window();
        OneStepController {
            policy,
            forecaster,
            fallback,
            history_load: VecDeque::new(),
            history_exog: VecDeque::new(),
            window,
        }
    }

    pub fn warm_up(&mut self, loads: &[f64], exog: &ExogSeries) {
        for (t, &l) in loads.iter().enumerate() {
            self.push_observation(l, exog.channels_at(t));
        }
    }

    pub fn push_observation(&mut self, load_kw: f64, exog: [f64; 5]) {
        self.history_load.push_back(load_kw);
        self.history_exog.push_back(exog);
        while self.history_load.len() > self.window {
            self.history_load.pop_front();
            self.history_exog.pop_front();
        }
    }

    pub fn step(
        &mut self,
        plant: &PlantConfig,
        step_index: usize,
        recent_load_kw: f64,
        telemetry: Option<&PlantTelemetry>,
        prev_on: &[bool],
    ) -> Result<ControllerDecision> {
        if self.history_load.len() < self.window {
            let action = self.fallback.step(plant, recent_load_kw, step_index);
            return Ok(ControllerDecision {
                raw_action: action_to_raw(&action, plant),
                fell_back: true,
            });
        }
        let loads: Vec<f64> = self.history_load.iter().copied().collect();
        let exog = ExogSeries {
            wind_mps: self.history_exog.iter().map(|e| e[0]).collect(),
            wind_deg: self.history_exog.iter().map(|e| e[1]).collect(),
            temp_c: self.history_exog.iter().map(|e| e[2]).collect(),
            rh_pct: self.history_exog.iter().map(|e| e[3]).collect(),
            ghi_wm2: self.history_exog.iter().map(|e| e[4]).collect(),
        };
        let req = ForecastRequest {
            load_window: &loads,
            exog_window: &exog,
            horizon: 1,
            first_step_of_day: step_index % STEPS_PER_DAY,
        };
        let f = self.forecaster.forecast(&req)?;
        let raw = self.policy.act(
            plant,
            &ObsInputs {
                forecast_kw: &f.load_kw,
                telemetry,
                prev_on,
            },
        )?;
        Ok(ControllerDecision {
            raw_action: raw,
            fell_back: false,
        })
    }
}

/// Invert the environment's affine action mapping so rule-based flows can be
/// replayed through the same dispatch path as policy actions.
pub fn action_to_raw(action: &ChillerAction, plant: &PlantConfig) -> Vec<f64> {
    action
        .flows_kgs
        .iter()
        .zip(&plant.chillers)
        .map(|(&f, ch)| (2.0 * f / ch.flow_max_kgs - 1.0).clamp(-1.0, 1.0))
        .collect()
}
