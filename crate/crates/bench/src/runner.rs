//! Closed-loop controller evaluation over a trace region. Every controller
//! is driven through the identical dispatch-and-score path; they differ
//! only in how they pick actions.

use chiller_core::control::{
    OneStepController, RecedingHorizonController, RuleBasedController,
};
use chiller_core::env::{priority_reward, EpisodeLog, RewardComponent, RewardSpec, StepRecord};
use chiller_core::error::Result;
use chiller_core::oracle::{lower_bound_trajectory, OracleConfig};
use chiller_core::plant::{
    check_constraints, steady_state_dispatch, ChillerAction, PlantConfig, PlantTelemetry,
};

use crate::pipeline::TraceBundle;

pub enum EvalController {
    Rule(RuleBasedController),
    OneStep(OneStepController),
    RecedingHorizon(RecedingHorizonController),
}

impl EvalController {
    fn name(&self) -> &'static str {
        match self {
            EvalController::Rule(_) => "rule_based",
            EvalController::OneStep(_) => "one_step_rl",
            EvalController::RecedingHorizon(_) => "receding_horizon_rl",
        }
    }
}

/// Run one controller over the evaluation region of a trace. History-based
/// controllers are warmed up with the prefix, then only ever see
/// measurements from strictly earlier steps.
pub fn evaluate_controller(
    plant: &PlantConfig,
    reward: &RewardSpec,
    bundle: &TraceBundle,
    controller: &mut EvalController,
) -> Result<(EpisodeLog, &'static str)> {
    let loads = bundle.region_loads();
    let warm_loads = &bundle.series.load_kw[..bundle.warmup_steps];
    let warm_exog = bundle.exog.slice(0..bundle.warmup_steps);

    match controller {
        EvalController::OneStep(c) => c.warm_up(warm_loads, &warm_exog),
        EvalController::RecedingHorizon(c) => c.warm_up(warm_loads, &warm_exog),
        EvalController::Rule(_) => {}
    }

    let mut log = EpisodeLog::default();
    let mut prev_on = vec![false; plant.n_chillers()];
    let mut prev_tel: Option<PlantTelemetry> = None;

    for (t, &load) in loads.iter().enumerate() {
        let abs = bundle.absolute(t);
        let recent = if t == 0 {
            bundle.series.load_kw[bundle.warmup_steps - 1]
        } else {
            loads[t - 1]
        };

        let (action, fell_back) = match controller {
            EvalController::Rule(c) => (c.step(plant, recent, abs), false),
            EvalController::OneStep(c) => {
                let d = c.step(plant, abs, recent, prev_tel.as_ref(), &prev_on)?;
                (decode_raw(&d.raw_action, plant), d.fell_back)
            }
            EvalController::RecedingHorizon(c) => {
                let d = c.step(plant, abs, recent, prev_tel.as_ref(), &prev_on)?;
                (decode_raw(&d.raw_action, plant), d.fell_back)
            }
        };

        let tel = steady_state_dispatch(plant, &action, load)?;
        let report = check_constraints(plant, &tel, &action, &reward.tolerances);
        let on = action.on_status();
        let (r, active) = priority_reward(&report, &tel, &prev_on, &on, reward);

        log.push(StepRecord {
            step: t,
            load_kw: load,
            flows_kgs: action.flows_kgs.clone(),
            plr: tel.plr.clone(),
            power_kw: tel.power_kw.clone(),
            t_return_c: tel.t_return_c,
            total_power_kw: tel.total_power_kw,
            reward: r,
            active_component: active.to_string(),
            hard_violation: matches!(active, RewardComponent::Hard(_)),
            energy_kwh: tel.total_power_kw * plant.dt_hours,
            unmet_load_kw: tel.unmet_load_kw,
            cop: tel.cop.clone(),
            fell_back,
        });

        // Feed the just-observed step into history for the next decision.
        match controller {
            EvalController::OneStep(c) => c.push_observation(load, bundle.exog.channels_at(abs)),
            EvalController::RecedingHorizon(c) => {
                c.push_observation(load, bundle.exog.channels_at(abs))
            }
            EvalController::Rule(_) => {}
        }
        prev_on = on;
        prev_tel = Some(tel);
    }

    Ok((log, controller.name()))
}

/// Apply the same raw-action mapping the training environment uses.
pub fn decode_raw(raw: &[f64], plant: &PlantConfig) -> ChillerAction {
    let requested: Vec<f64> = raw
        .iter()
        .zip(&plant.chillers)
        .map(|(&a, ch)| (a.clamp(-1.0, 1.0) + 1.0) * 0.5 * ch.flow_max_kgs)
        .collect();
    ChillerAction::decode(&requested, plant)
}

/// Per-step optimal dispatch over the evaluation region, folded into the
/// same log format for reporting.
pub fn oracle_log(
    plant: &PlantConfig,
    reward: &RewardSpec,
    oracle_cfg: &OracleConfig,
    bundle: &TraceBundle,
) -> Result<EpisodeLog> {
    let loads = bundle.region_loads();
    let sols = lower_bound_trajectory(plant, oracle_cfg, loads)?;
    let mut log = EpisodeLog::default();
    let mut prev_on = vec![false; plant.n_chillers()];
    for (t, sol) in sols.iter().enumerate() {
        let on = sol.action.on_status();
        let (r, active) = priority_reward(&sol.report, &sol.telemetry, &prev_on, &on, reward);
        log.push(StepRecord {
            step: t,
            load_kw: loads[t],
            flows_kgs: sol.action.flows_kgs.clone(),
            plr: sol.telemetry.plr.clone(),
            power_kw: sol.telemetry.power_kw.clone(),
            t_return_c: sol.telemetry.t_return_c,
            total_power_kw: sol.total_power_kw,
            reward: r,
            active_component: active.to_string(),
            hard_violation: !sol.feasible,
            energy_kwh: sol.total_power_kw * plant.dt_hours,
            unmet_load_kw: sol.telemetry.unmet_load_kw,
            cop: sol.telemetry.cop.clone(),
            fell_back: false,
        });
        prev_on = on;
    }
    Ok(log)
}
