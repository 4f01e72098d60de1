//! Shared data preparation: synthetic traces with forecaster warm-up,
//! fitted forecast models, precomputed forecast windows and training
//! environments.

use std::sync::Arc;

use chiller_core::config::AppConfig;
use chiller_core::control::RuleBasedController;
use chiller_core::env::{ChillerEnv, EpisodeConfig, ForecastChannel, StartMode};
use chiller_core::error::Result;
use chiller_core::forecast::{
    fit_lag_regression, synthetic_campus_load, ExogSeries, ForecastRequest, Forecaster,
    LagRegressionForecaster, LoadSeries, STEPS_PER_DAY,
};
use chiller_core::plant::steady_state_dispatch;

/// A generated trace with a forecaster warm-up prefix. The controlled
/// region starts at `warmup_steps`.
#[derive(Debug, Clone)]
pub struct TraceBundle {
    pub series: LoadSeries,
    pub exog: ExogSeries,
    pub warmup_steps: usize,
}

impl TraceBundle {
    pub fn region_loads(&self) -> &[f64] {
        &self.series.load_kw[self.warmup_steps..]
    }

    pub fn region_len(&self) -> usize {
        self.series.len() - self.warmup_steps
    }

    /// Absolute series index of a region step.
    pub fn absolute(&self, region_step: usize) -> usize {
        self.warmup_steps + region_step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Span {
    Train,
    Eval,
}

/// Generate the train or eval trace, including the warm-up prefix.
pub fn build_trace(cfg: &AppConfig, span: Span) -> Result<TraceBundle> {
    let (seed, days) = match span {
        Span::Train => (cfg.trace.train_seed, cfg.trace.train_days),
        Span::Eval => (cfg.trace.eval_seed, cfg.trace.eval_days),
    };
    let total_days = cfg.trace.warmup_days + days;
    let (series, exog) = synthetic_campus_load(total_days, seed, &cfg.trace.params)?;
    Ok(TraceBundle {
        series,
        exog,
        warmup_steps: cfg.trace.warmup_days * STEPS_PER_DAY,
    })
}

/// Fit the lag-regression forecaster on its own fitting trace (distinct
/// seed span of the same generator family).
pub fn fit_forecaster(cfg: &AppConfig) -> Result<LagRegressionForecaster> {
    let days = cfg.trace.warmup_days + cfg.trace.fit_days;
    let (series, exog) = synthetic_campus_load(days, cfg.trace.train_seed, &cfg.trace.params)?;
    fit_lag_regression(&series, &exog, cfg.forecast.clone())
}

/// Precompute one forecast window per region step of a trace.
pub fn precompute_forecasts(
    model: &dyn Forecaster,
    bundle: &TraceBundle,
    horizon: usize,
) -> Result<Vec<Vec<f64>>> {
    let window = model.min_window();
    let mut out = Vec::with_capacity(bundle.region_len());
    for t in 0..bundle.region_len() {
        let a = bundle.absolute(t);
        let lo = a.saturating_sub(window);
        let req = ForecastRequest {
            load_window: &bundle.series.load_kw[lo..a],
            exog_window: &bundle.exog.slice(lo..a),
            horizon,
            first_step_of_day: a % STEPS_PER_DAY,
        };
        out.push(model.forecast(&req)?.load_kw);
    }
    Ok(out)
}

/// Mean rule-based step power over the training region, rounded to 1 kW;
/// used as the base-reward power scale so the reward reads as savings
/// against current practice.
pub fn calibrate_power_scale(cfg: &AppConfig, bundle: &TraceBundle) -> Result<f64> {
    let plant = &cfg.plant;
    let mut ctl = RuleBasedController::new(cfg.rule_based.clone(), plant)?;
    let loads = bundle.region_loads();
    let mut total = 0.0;
    for (t, &load) in loads.iter().enumerate() {
        let recent = if t == 0 {
            bundle.series.load_kw[bundle.warmup_steps - 1]
        } else {
            loads[t - 1]
        };
        let action = ctl.step(plant, recent, bundle.absolute(t));
        let tel = steady_state_dispatch(plant, &action, load)?;
        total += tel.total_power_kw;
    }
    Ok((total / loads.len() as f64).round().max(1.0))
}

/// Which controller family an environment (and checkpoint) is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    RecedingHorizon,
    OneStep,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::RecedingHorizon => "receding_horizon",
            Variant::OneStep => "one_step",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "receding_horizon" | "rh" => Some(Variant::RecedingHorizon),
            "one_step" | "one-step" | "os" => Some(Variant::OneStep),
            _ => None,
        }
    }

    pub fn horizon(&self, cfg: &AppConfig) -> usize {
        match self {
            Variant::RecedingHorizon => cfg.train.horizon,
            Variant::OneStep => 1,
        }
    }
}

/// Assemble a training environment for one controller variant.
pub fn make_training_env(
    cfg: &AppConfig,
    bundle: &TraceBundle,
    model: &LagRegressionForecaster,
    variant: Variant,
    power_scale_kw: f64,
) -> Result<ChillerEnv> {
    let horizon = variant.horizon(cfg);
    let forecasts = if cfg.train.perfect_foresight {
        ForecastChannel::PerfectForesight
    } else {
        ForecastChannel::Precomputed(precompute_forecasts(model, bundle, horizon)?)
    };
    let mut reward = cfg.reward.resolve(&cfg.plant)?;
    reward.power_scale_kw = power_scale_kw;
    ChillerEnv::new(
        cfg.plant.clone(),
        reward,
        bundle.region_loads().to_vec(),
        forecasts,
        EpisodeConfig {
            episode_len: cfg.train.episode_len,
            horizon,
            start: StartMode::Random,
        },
        cfg.train.ppo.seed,
    )
}

/// Boxed forecaster by id, for the `forecast` command and controller wiring.
pub fn forecaster_by_id(
    id: &str,
    fitted: Option<LagRegressionForecaster>,
) -> Result<Arc<dyn Forecaster>> {
    use chiller_core::error::CoreError;
    use chiller_core::forecast::{PersistenceForecaster, SeasonalNaiveForecaster};
    match id {
        "persistence" => Ok(Arc::new(PersistenceForecaster)),
        "seasonal_naive" => Ok(Arc::new(SeasonalNaiveForecaster::default())),
        "lag_regression" => fitted
            .map(|m| Arc::new(m) as Arc<dyn Forecaster>)
            .ok_or_else(|| CoreError::config("lag_regression forecaster not fitted")),
        other => Err(CoreError::config(format!("unknown forecaster '{other}'"))),
    }
}
