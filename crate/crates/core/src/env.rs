//! Episodic control environment around the plant physics.
//!
//! Each step the agent emits a raw vector in [-1, 1] per chiller, which is
//! mapped affinely onto [0, flow_max] and decoded through the OFF-threshold
//! rule. The environment dispatches the decoded flows against the current
//! true load, scores the step with a prioritized constraint-first reward,
//! and advances along the load trace.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::plant::{
    check_constraints, steady_state_dispatch, ChillerAction, ConstraintId, ConstraintReport,
    ConstraintTolerances, PlantConfig, PlantTelemetry,
};

/// Weights of the soft penalties that enter the base reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftWeights {
    pub plr_range: f64,
    pub min_flow: f64,
    pub cop_cap: f64,
    pub switching: f64,
    pub sparsity: f64,
}

impl Default for SoftWeights {
    fn default() -> Self {
        SoftWeights {
            plr_range: 0.5,
            min_flow: 0.5,
            cop_cap: 0.5,
            switching: 0.2,
            sparsity: 0.1,
        }
    }
}

impl SoftWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.plr_range,
            self.min_flow,
            self.cop_cap,
            self.switching,
            self.sparsity,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CoreError::config("soft weights must be non-negative"));
        }
        Ok(())
    }
}

/// Prioritized reward description.
///
/// Hard constraints are scanned in `hard_order`; the first violated one is
/// the single active reward component and yields `-lambda * (1 + v/scale)`.
/// With all hard constraints satisfied the base reward applies: a power
/// term `(power_scale - total_power)/power_scale` clamped to [-1, 1], minus
/// soft penalties. Soft violation magnitudes are normalized by their scale
/// and clamped to one, so the base reward never descends into the hard
/// penalty range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub hard_order: Vec<ConstraintId>,
    pub lambda: Vec<f64>,
    pub soft: SoftWeights,
    /// Reference power in kW; typically the rule-based baseline's mean step
    /// power on a calibration trace, making the base reward a normalized
    /// savings signal.
    pub power_scale_kw: f64,
    /// Scale for return-temperature violations, degC.
    pub temp_scale_c: f64,
    /// Scale for minimum-flow violations, kg/s.
    pub flow_scale_kgs: f64,
    /// Scale for COP-cap violations.
    pub cop_scale: f64,
    pub tolerances: ConstraintTolerances,
}

impl RewardSpec {
    pub fn for_plant(plant: &PlantConfig) -> Self {
        let flow_scale = plant
            .chillers
            .iter()
            .map(|c| c.flow_min_kgs)
            .fold(f64::INFINITY, f64::min);
        let cop_scale = plant
            .chillers
            .iter()
            .map(|c| c.cop_max)
            .fold(f64::INFINITY, f64::min);
        RewardSpec {
            hard_order: vec![ConstraintId::EnergyBalance, ConstraintId::TReturnRange],
            lambda: vec![10.0, 10.0],
            soft: SoftWeights::default(),
            power_scale_kw: 1000.0,
            temp_scale_c: plant.t_return_max_c - plant.t_return_min_c,
            flow_scale_kgs: flow_scale,
            cop_scale,
            tolerances: ConstraintTolerances::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hard_order.is_empty() {
            return Err(CoreError::config("hard_order must not be empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &self.hard_order {
            if !seen.insert(*id) {
                return Err(CoreError::config("hard_order ids must be distinct"));
            }
        }
        if self.lambda.len() != self.hard_order.len() {
            return Err(CoreError::config("lambda must match hard_order length"));
        }
        if self.lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(CoreError::config("lambda weights must be non-negative"));
        }
        self.soft.validate()?;
        if !(self.power_scale_kw > 0.0) {
            return Err(CoreError::config("power_scale_kw must be positive"));
        }
        Ok(())
    }

    fn hard_scale(&self, id: ConstraintId) -> f64 {
        match id {
            ConstraintId::EnergyBalance => self.power_scale_kw,
            ConstraintId::TReturnRange => self.temp_scale_c,
            ConstraintId::PlrRange => 1.0,
            ConstraintId::MinFlow => self.flow_scale_kgs,
            ConstraintId::CopCap => self.cop_scale,
        }
    }

    /// Largest possible deduction below the top of the base-reward range.
    /// Base rewards always stay above `-(1 + total soft budget)`, which the
    /// penalty-dominance property checks against the hard floor.
    pub fn soft_budget(&self, n_chillers: usize) -> f64 {
        self.soft.plr_range
            + self.soft.min_flow
            + self.soft.cop_cap
            + self.soft.switching * n_chillers as f64
            + self.soft.sparsity
    }
}

/// Which reward component fired this step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardComponent {
    Hard(ConstraintId),
    Base,
}

impl std::fmt::Display for RewardComponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RewardComponent::Hard(id) => write!(f, "hard:{id}"),
            RewardComponent::Base => f.write_str("base"),
        }
    }
}

/// Scan the hard constraints in priority order and emit the single active
/// reward component.
pub fn priority_reward(
    report: &ConstraintReport,
    telemetry: &PlantTelemetry,
    prev_on: &[bool],
    on: &[bool],
    spec: &RewardSpec,
) -> (f64, RewardComponent) {
    for (id, lambda) in spec.hard_order.iter().zip(&spec.lambda) {
        let entry = report.get(*id);
        if !entry.satisfied {
            let scaled = entry.violation / spec.hard_scale(*id);
            return (-lambda * (1.0 + scaled), RewardComponent::Hard(*id));
        }
    }

    let n = on.len().max(1);
    let power_term =
        ((spec.power_scale_kw - telemetry.total_power_kw) / spec.power_scale_kw).clamp(-1.0, 1.0);

    let soft_norm = |id: ConstraintId, scale: f64| -> f64 {
        (report.get(id).violation / scale).clamp(0.0, 1.0)
    };
    let plr_pen = spec.soft.plr_range * soft_norm(ConstraintId::PlrRange, 1.0);
    let flow_pen = spec.soft.min_flow * soft_norm(ConstraintId::MinFlow, spec.flow_scale_kgs);
    let cop_pen = spec.soft.cop_cap * soft_norm(ConstraintId::CopCap, spec.cop_scale);

    let toggles = prev_on
        .iter()
        .zip(on)
        .filter(|(a, b)| a != b)
        .count() as f64;
    let switch_pen = spec.soft.switching * toggles;

    let n_on = on.iter().filter(|&&s| s).count() as f64;
    let sparsity_pen = spec.soft.sparsity * (n_on / n as f64);

    let reward = power_term - plr_pen - flow_pen - cop_pen - switch_pen - sparsity_pen;
    (reward, RewardComponent::Base)
}

/// Fixed observation layout: K forecast channels, then cooling, PLR, COP
/// and power per chiller, the loop return temperature, and the previous
/// ON/OFF pattern. Everything is scaled to O(1) references and clamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub n_chillers: usize,
    pub horizon: usize,
}

impl ObsLayout {
    pub fn dim(&self) -> usize {
        self.horizon + 4 * self.n_chillers + 1 + self.n_chillers
    }
}

/// Assemble the observation vector. `forecast_kw` shorter than the layout
/// horizon is padded with its last value (or zero when empty).
pub fn build_observation(
    plant: &PlantConfig,
    layout: &ObsLayout,
    forecast_kw: &[f64],
    telemetry: Option<&PlantTelemetry>,
    prev_on: &[bool],
) -> Vec<f64> {
    let mut obs = Vec::with_capacity(layout.dim());
    let total_rated = plant.total_rated_kw();
    let pad = forecast_kw.last().copied().unwrap_or(0.0);
    for h in 0..layout.horizon {
        let q = forecast_kw.get(h).copied().unwrap_or(pad);
        obs.push(q / total_rated);
    }
    for i in 0..layout.n_chillers {
        let ch = &plant.chillers[i];
        let (cooling, plr, cop, power) = match telemetry {
            Some(t) => (t.cooling_kw[i], t.plr[i], t.cop[i], t.power_kw[i]),
            None => (0.0, 0.0, 0.0, 0.0),
        };
        obs.push(cooling / ch.rated_kw);
        obs.push(plr);
        obs.push(cop / ch.cop_max);
        // Scale power by the draw of a design-COP machine at rated load.
        obs.push(power / (ch.rated_kw / 8.0));
    }
    let t_cr = telemetry.map_or(plant.t_supply_c, |t| t.t_return_c);
    obs.push((t_cr - plant.t_supply_c) / (plant.t_return_max_c - plant.t_supply_c));
    for i in 0..layout.n_chillers {
        obs.push(if prev_on.get(i).copied().unwrap_or(false) {
            1.0
        } else {
            0.0
        });
    }
    for v in &mut obs {
        *v = v.clamp(-5.0, 5.0);
    }
    obs
}

/// Where the environment's per-step forecast channel comes from.
#[derive(Debug, Clone)]
pub enum ForecastChannel {
    /// Use the true future loads (for ablations).
    PerfectForesight,
    /// Precomputed forecast per trace step, each at least `horizon` long.
    Precomputed(Vec<Vec<f64>>),
}

/// How episode start offsets are chosen at reset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StartMode {
    Fixed(usize),
    Random,
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub episode_len: usize,
    pub horizon: usize,
    pub start: StartMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub load_kw: f64,
    pub flows_kgs: Vec<f64>,
    pub plr: Vec<f64>,
    pub power_kw: Vec<f64>,
    pub t_return_c: f64,
    pub total_power_kw: f64,
    pub reward: f64,
    pub active_component: String,
    pub hard_violation: bool,
    pub energy_kwh: f64,
    pub unmet_load_kw: f64,
    pub cop: Vec<f64>,
    pub fell_back: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
}

impl EpisodeLog {
    pub fn push(&mut self, rec: StepRecord) {
        self.steps.push(rec);
    }

    pub fn hard_violation_fraction(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().filter(|s| s.hard_violation).count() as f64 / self.steps.len() as f64
    }
}

/// Total electrical energy over a completed episode.
pub fn episode_energy(log: &EpisodeLog) -> f64 {
    log.steps.iter().map(|s| s.energy_kwh).sum()
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub telemetry: PlantTelemetry,
    pub report: ConstraintReport,
    pub done: bool,
    pub active_component: RewardComponent,
    pub energy_kwh: f64,
    pub hard_violation: bool,
}

/// Episodic environment over a load trace.
pub struct ChillerEnv {
    plant: PlantConfig,
    reward: RewardSpec,
    loads_kw: Vec<f64>,
    forecasts: ForecastChannel,
    episode: EpisodeConfig,
    layout: ObsLayout,
    rng: rand_chacha::ChaCha20Rng,
    seed: u64,
    // Episode state.
    offset: usize,
    step_in_episode: usize,
    prev_on: Vec<bool>,
    prev_telemetry: Option<PlantTelemetry>,
    done: bool,
    started: bool,
}

impl ChillerEnv {
    pub fn new(
        plant: PlantConfig,
        reward: RewardSpec,
        loads_kw: Vec<f64>,
        forecasts: ForecastChannel,
        episode: EpisodeConfig,
        seed: u64,
    ) -> Result<Self> {
        plant.validate()?;
        reward.validate()?;
        if loads_kw.is_empty() {
            return Err(CoreError::config("load trace is empty"));
        }
        if episode.episode_len == 0 || episode.episode_len > loads_kw.len() {
            return Err(CoreError::config(format!(
                "episode length {} incompatible with trace of {} steps",
                episode.episode_len,
                loads_kw.len()
            )));
        }
        if let ForecastChannel::Precomputed(f) = &forecasts {
            if f.len() != loads_kw.len() {
                return Err(CoreError::config(
                    "precomputed forecasts must cover every trace step",
                ));
            }
        }
        let layout = ObsLayout {
            n_chillers: plant.n_chillers(),
            horizon: episode.horizon,
        };
        use rand::SeedableRng;
        Ok(ChillerEnv {
            rng: rand_chacha::ChaCha20Rng::seed_from_u64(seed),
            seed,
            layout,
            prev_on: vec![false; plant.n_chillers()],
            prev_telemetry: None,
            offset: 0,
            step_in_episode: 0,
            done: true,
            started: false,
            plant,
            reward,
            loads_kw,
            forecasts,
            episode,
        })
    }

    pub fn layout(&self) -> ObsLayout {
        self.layout
    }

    pub fn plant(&self) -> &PlantConfig {
        &self.plant
    }

    pub fn reward_spec(&self) -> &RewardSpec {
        &self.reward
    }

    pub fn trace_len(&self) -> usize {
        self.loads_kw.len()
    }

    /// Re-derive the offset RNG for a batch index so that training can be
    /// resumed reproducibly.
    pub fn reseed_offsets(&mut self, stream: u64) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.wrapping_add(1));
        self.rng = rng;
    }

    fn forecast_window(&self, t: usize) -> Vec<f64> {
        let k = self.layout.horizon;
        match &self.forecasts {
            ForecastChannel::PerfectForesight => (0..k)
                .map(|h| {
                    let idx = (t + h).min(self.loads_kw.len() - 1);
                    self.loads_kw[idx]
                })
                .collect(),
            ForecastChannel::Precomputed(f) => {
                let row = &f[t];
                (0..k)
                    .map(|h| row.get(h).copied().unwrap_or_else(|| *row.last().unwrap_or(&0.0)))
                    .collect()
            }
        }
    }

    fn observation(&self) -> Vec<f64> {
        let t = (self.offset + self.step_in_episode).min(self.loads_kw.len() - 1);
        build_observation(
            &self.plant,
            &self.layout,
            &self.forecast_window(t),
            self.prev_telemetry.as_ref(),
            &self.prev_on,
        )
    }

    pub fn reset(&mut self) -> Vec<f64> {
        use rand::Rng;
        self.offset = match self.episode.start {
            StartMode::Fixed(o) => o.min(self.loads_kw.len() - self.episode.episode_len),
            StartMode::Random => {
                let span = self.loads_kw.len() - self.episode.episode_len;
                if span == 0 {
                    0
                } else {
                    self.rng.gen_range(0..=span)
                }
            }
        };
        self.step_in_episode = 0;
        self.prev_on = vec![false; self.plant.n_chillers()];
        self.prev_telemetry = None;
        self.done = false;
        self.started = true;
        self.observation()
    }

    pub fn current_load(&self) -> f64 {
        self.loads_kw[self.offset + self.step_in_episode]
    }

    /// Advance one step with a raw action in [-1, 1] per chiller.
    pub fn step(&mut self, raw_action: &[f64]) -> Result<StepResult> {
        if !self.started || self.done {
            return Err(CoreError::contract(
                "step called before reset or after episode end",
            ));
        }
        if raw_action.len() != self.plant.n_chillers() {
            return Err(CoreError::contract(format!(
                "action has {} entries for {} chillers",
                raw_action.len(),
                self.plant.n_chillers()
            )));
        }

        let requested: Vec<f64> = raw_action
            .iter()
            .zip(&self.plant.chillers)
            .map(|(&a, ch)| {
                let a = if a.is_finite() { a.clamp(-1.0, 1.0) } else { -1.0 };
                (a + 1.0) * 0.5 * ch.flow_max_kgs
            })
            .collect();
        let action = ChillerAction::decode(&requested, &self.plant);

        let load = self.current_load();
        let telemetry = steady_state_dispatch(&self.plant, &action, load)?;
        let report = check_constraints(&self.plant, &telemetry, &action, &self.reward.tolerances);
        let on = action.on_status();
        let (reward, active) = priority_reward(&report, &telemetry, &self.prev_on, &on, &self.reward);
        let hard_violation = matches!(active, RewardComponent::Hard(_));
        let energy_kwh = telemetry.total_power_kw * self.plant.dt_hours;

        self.prev_on = on;
        self.prev_telemetry = Some(telemetry.clone());
        self.step_in_episode += 1;
        if self.step_in_episode >= self.episode.episode_len {
            self.done = true;
        }

        Ok(StepResult {
            observation: self.observation(),
            reward,
            telemetry,
            report,
            done: self.done,
            active_component: active,
            energy_kwh,
            hard_violation,
        })
    }
}

impl crate::ppo::train::RlEnv for ChillerEnv {
    fn obs_dim(&self) -> usize {
        self.layout.dim()
    }

    fn act_dim(&self) -> usize {
        self.plant.n_chillers()
    }

    fn reset(&mut self) -> Vec<f64> {
        ChillerEnv::reset(self)
    }

    fn step(&mut self, action: &[f64]) -> crate::ppo::train::StepOutcome {
        let r = ChillerEnv::step(self, action).expect("environment step contract");
        crate::ppo::train::StepOutcome {
            obs: r.observation,
            reward: r.reward,
            done: r.done,
            hard_violation: r.hard_violation,
            energy_kwh: r.energy_kwh,
        }
    }

    fn begin_batch(&mut self, batch_index: u64) {
        self.reseed_offsets(batch_index);
    }
}
