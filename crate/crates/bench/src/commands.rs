//! Subcommand implementations. Each takes the loaded configuration and an
//! output directory and writes deterministic artifacts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use chiller_core::config::AppConfig;
use chiller_core::control::{
    OneStepController, PolicyController, RecedingHorizonController, RhConfig, RuleBasedController,
};
use chiller_core::env::episode_energy;
use chiller_core::error::{CoreError, Result};
use chiller_core::forecast::{
    nmae, ForecastRequest, Forecaster, LoadSeries, PersistenceForecaster,
    SeasonalNaiveForecaster, STEPS_PER_DAY,
};
use chiller_core::io;
use chiller_core::oracle::lower_bound_trajectory;
use chiller_core::plant::fit_power_curve;
use chiller_core::ppo::train::{BatchStats, Trainer, TrainState};
use chiller_core::ppo::Checkpoint;

use crate::pipeline::{
    self, build_trace, calibrate_power_scale, fit_forecaster, make_training_env, Span,
    TraceBundle, Variant,
};
use crate::report::{
    apply_savings, config_hash, summarize_log, trace_id, BenchReport, RowResult,
};
use crate::runner::{evaluate_controller, oracle_log, EvalController};

pub fn checkpoint_path(out: &Path, variant: Variant) -> PathBuf {
    out.join(format!("checkpoint_{}.json", variant.name()))
}

pub fn state_path(out: &Path, variant: Variant) -> PathBuf {
    out.join(format!("train_state_{}.json", variant.name()))
}

/// Write the train and eval traces plus per-chiller curve samples.
pub fn cmd_gen_data(cfg: &AppConfig, out: &Path, sample_noise_kw: f64) -> Result<()> {
    std::fs::create_dir_all(out)?;
    for (span, name) in [(Span::Train, "train_trace.csv"), (Span::Eval, "eval_trace.csv")] {
        let bundle = build_trace(cfg, span)?;
        io::write_trace(&out.join(name), &bundle.series, &bundle.exog)?;
    }

    let samples_dir = out.join("samples");
    std::fs::create_dir_all(&samples_dir)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    for ch in &cfg.plant.chillers {
        let samples: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let plr = 0.2 + 0.8 * i as f64 / 19.0;
                let clean = chiller_core::plant::power_from_plr(ch, plr).expect("valid plr");
                let noise: f64 = rng.sample(StandardNormal);
                (plr, clean + sample_noise_kw * noise)
            })
            .collect();
        io::write_plr_samples(&samples_dir.join(format!("chiller_{}.csv", ch.id)), &samples)?;
    }
    println!("wrote traces and curve samples to {}", out.display());
    Ok(())
}

/// Fit cubic power curves for every chiller sample file in a directory and
/// render a coefficient table.
pub fn cmd_fit_curves(cfg: &AppConfig, samples_dir: &Path, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut text = String::from("chiller power curve fits\n========================\n");
    text.push_str(&format!(
        "{:<10} {:>12} {:>12} {:>12} {:>12} {:>8}\n",
        "chiller", "a", "b", "c", "d", "R^2"
    ));
    let mut csv = String::from("chiller,a,b,c,d,r_squared,error\n");
    for ch in &cfg.plant.chillers {
        let path = samples_dir.join(format!("chiller_{}.csv", ch.id));
        let row = io::read_plr_samples(&path).and_then(|samples| fit_power_curve(&samples));
        match row {
            Ok(fit) => {
                text.push_str(&format!(
                    "{:<10} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>8.4}\n",
                    ch.id, fit.coeffs[0], fit.coeffs[1], fit.coeffs[2], fit.coeffs[3], fit.r_squared
                ));
                csv.push_str(&format!(
                    "{},{},{},{},{},{},\n",
                    ch.id,
                    io::fmt(fit.coeffs[0]),
                    io::fmt(fit.coeffs[1]),
                    io::fmt(fit.coeffs[2]),
                    io::fmt(fit.coeffs[3]),
                    io::fmt(fit.r_squared),
                ));
            }
            Err(e) => {
                text.push_str(&format!("{:<10} ERROR: {e}\n", ch.id));
                csv.push_str(&format!("{},,,,,,\"{e}\"\n", ch.id));
            }
        }
    }
    std::fs::write(out.join("curve_fits.txt"), &text)?;
    std::fs::write(out.join("curve_fits.csv"), &csv)?;
    print!("{text}");
    Ok(())
}

pub struct TrainArtifacts {
    pub checkpoint: Checkpoint,
    pub curve: Vec<BatchStats>,
    pub power_scale_kw: f64,
    pub diverged: bool,
}

/// Train one controller variant and persist the checkpoint, resume state
/// and training curve.
pub fn cmd_train(
    cfg: &AppConfig,
    out: &Path,
    variant: Variant,
    resume: bool,
) -> Result<TrainArtifacts> {
    std::fs::create_dir_all(out)?;
    let bundle = build_trace(cfg, Span::Train)?;
    let model = fit_forecaster(cfg)?;
    let power_scale = calibrate_power_scale(cfg, &bundle)?;
    let mut env = make_training_env(cfg, &bundle, &model, variant, power_scale)?;

    use chiller_core::ppo::train::RlEnv;
    let mut trainer = if resume {
        let text = std::fs::read_to_string(state_path(out, variant))?;
        let state: TrainState =
            serde_json::from_str(&text).map_err(|e| CoreError::Serde(e.to_string()))?;
        Trainer::from_state(cfg.train.ppo.clone(), state)?
    } else {
        Trainer::new(cfg.train.ppo.clone(), env.obs_dim(), env.act_dim())?
    };

    let mut curve = Vec::new();
    let mut diverged = false;
    while trainer.steps_done < cfg.train.total_steps {
        match trainer.run_batch(&mut env) {
            Ok(stats) => {
                if stats.batch % 10 == 0 {
                    println!(
                        "[{}] batch {:4} return {:9.2} violations {:.3} kl {:.4}",
                        variant.name(),
                        stats.batch,
                        stats.mean_return,
                        stats.hard_violation_frac,
                        stats.approx_kl
                    );
                }
                curve.push(stats);
            }
            Err(CoreError::Numeric(msg)) => {
                eprintln!("training diverged: {msg}");
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let ckpt = Checkpoint::from_parts(
        &trainer.policy,
        &trainer.value,
        &trainer.obs_norm,
        variant.horizon(cfg),
        cfg.plant.n_chillers(),
        trainer.steps_done,
        &cfg.train.ppo,
    );
    ckpt.save(&checkpoint_path(out, variant))?;
    let state_json = serde_json::to_string(&trainer.state())
        .map_err(|e| CoreError::Serde(e.to_string()))?;
    std::fs::write(state_path(out, variant), state_json)?;
    io::write_training_curve(&out.join(format!("curve_{}.csv", variant.name())), &curve)?;
    println!(
        "[{}] trained {} steps, checkpoint at {}",
        variant.name(),
        trainer.steps_done,
        checkpoint_path(out, variant).display()
    );

    Ok(TrainArtifacts {
        checkpoint: ckpt,
        curve,
        power_scale_kw: power_scale,
        diverged,
    })
}

fn build_rl_controller(
    cfg: &AppConfig,
    ckpt: &Checkpoint,
    variant: Variant,
) -> Result<EvalController> {
    let policy = PolicyController::from_checkpoint(ckpt);
    let model = fit_forecaster(cfg)?;
    let fallback = RuleBasedController::new(cfg.rule_based.clone(), &cfg.plant)?;
    Ok(match variant {
        Variant::OneStep => EvalController::OneStep(OneStepController::new(
            policy,
            Arc::new(model),
            fallback,
        )),
        Variant::RecedingHorizon => EvalController::RecedingHorizon(
            RecedingHorizonController::new(
                RhConfig {
                    horizon: ckpt.horizon,
                    ..cfg.rh.clone()
                },
                policy,
                Arc::new(model),
                fallback,
            )?,
        ),
    })
}

/// Evaluate a single controller over the benchmark trace.
pub fn cmd_eval(cfg: &AppConfig, out: &Path, which: &str, ckpt_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let bundle = build_trace(cfg, Span::Eval)?;
    let reward = {
        let mut r = cfg.reward.resolve(&cfg.plant)?;
        r.power_scale_kw = calibrate_power_scale(cfg, &build_trace(cfg, Span::Train)?)?;
        r
    };

    let log = match which {
        "rule_based" | "rule" => {
            let mut ctl = EvalController::Rule(RuleBasedController::new(
                cfg.rule_based.clone(),
                &cfg.plant,
            )?);
            evaluate_controller(&cfg.plant, &reward, &bundle, &mut ctl)?.0
        }
        "oracle" => oracle_log(&cfg.plant, &reward, &cfg.oracle, &bundle)?,
        other => {
            let variant = Variant::parse(other)
                .ok_or_else(|| CoreError::config(format!("unknown controller '{other}'")))?;
            let ckpt = Checkpoint::load(&checkpoint_path(ckpt_dir, variant))?;
            let mut ctl = build_rl_controller(cfg, &ckpt, variant)?;
            evaluate_controller(&cfg.plant, &reward, &bundle, &mut ctl)?.0
        }
    };

    let name = which.replace('-', "_");
    io::write_episode_log(
        &out.join(format!("steps_{name}.csv")),
        &log,
        cfg.plant.n_chillers(),
    )?;
    let m = summarize_log(&name, &log);
    println!(
        "{name}: energy {:.1} kWh over {} steps, hard violations {:.3}, mean ON PLR {:.3}, mean COP {:.3}",
        m.energy_kwh,
        log.steps.len(),
        m.hard_violation_frac,
        m.mean_on_plr,
        m.mean_cop
    );
    println!("episode energy check: {:.3} kWh", episode_energy(&log));
    Ok(())
}

/// Run every controller over the identical trace and emit the comparison
/// report plus per-step logs.
pub fn cmd_compare(cfg: &AppConfig, out: &Path, ckpt_dir: &Path) -> Result<BenchReport> {
    std::fs::create_dir_all(out)?;
    let bundle = build_trace(cfg, Span::Eval)?;
    let train_bundle = build_trace(cfg, Span::Train)?;
    let power_scale = calibrate_power_scale(cfg, &train_bundle)?;
    let mut reward = cfg.reward.resolve(&cfg.plant)?;
    reward.power_scale_kw = power_scale;

    let mut rows: Vec<RowResult> = Vec::new();

    // Rule-based baseline.
    {
        let mut ctl = EvalController::Rule(RuleBasedController::new(
            cfg.rule_based.clone(),
            &cfg.plant,
        )?);
        let (log, name) = evaluate_controller(&cfg.plant, &reward, &bundle, &mut ctl)?;
        io::write_episode_log(&out.join("steps_rule_based.csv"), &log, cfg.plant.n_chillers())?;
        rows.push(RowResult::Metrics(summarize_log(name, &log)));
    }

    // RL rows; a missing checkpoint fails only its own row.
    for variant in [Variant::OneStep, Variant::RecedingHorizon] {
        let row_name = match variant {
            Variant::OneStep => "one_step_rl",
            Variant::RecedingHorizon => "receding_horizon_rl",
        };
        let result = Checkpoint::load(&checkpoint_path(ckpt_dir, variant))
            .and_then(|ckpt| build_rl_controller(cfg, &ckpt, variant))
            .and_then(|mut ctl| evaluate_controller(&cfg.plant, &reward, &bundle, &mut ctl));
        match result {
            Ok((log, name)) => {
                io::write_episode_log(
                    &out.join(format!("steps_{name}.csv")),
                    &log,
                    cfg.plant.n_chillers(),
                )?;
                rows.push(RowResult::Metrics(summarize_log(name, &log)));
            }
            Err(e) => rows.push(RowResult::Failed {
                name: row_name.to_string(),
                error: e.to_string(),
            }),
        }
    }

    // Oracle lower bound.
    {
        let log = oracle_log(&cfg.plant, &reward, &cfg.oracle, &bundle)?;
        io::write_episode_log(&out.join("steps_oracle.csv"), &log, cfg.plant.n_chillers())?;
        rows.push(RowResult::Metrics(summarize_log("oracle", &log)));
    }

    apply_savings(&mut rows, "rule_based")?;

    let report = BenchReport {
        rows,
        seed: cfg.seed,
        config_hash: config_hash(cfg)?,
        trace_id: trace_id(bundle.region_loads()),
        steps: bundle.region_len(),
        dt_hours: cfg.plant.dt_hours,
        reference: cfg.benchmark.reference.clone(),
    };
    std::fs::write(out.join("report.txt"), report.to_text())?;
    std::fs::write(out.join("report.csv"), report.to_csv())?;
    print!("{}", report.to_text());
    Ok(report)
}

/// Per-step oracle solutions for the benchmark trace (or a provided one).
pub fn cmd_oracle(cfg: &AppConfig, out: &Path, trace: Option<&Path>) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let bundle = match trace {
        Some(path) => {
            let (series, exog) = io::read_trace(path)?;
            TraceBundle {
                series,
                exog,
                warmup_steps: 0,
            }
        }
        None => build_trace(cfg, Span::Eval)?,
    };
    let reward = cfg.reward.resolve(&cfg.plant)?;
    let log = oracle_log(&cfg.plant, &reward, &cfg.oracle, &bundle)?;
    io::write_episode_log(&out.join("oracle_steps.csv"), &log, cfg.plant.n_chillers())?;
    let sols = lower_bound_trajectory(&cfg.plant, &cfg.oracle, bundle.region_loads())?;
    let infeasible = sols.iter().filter(|s| !s.feasible).count();
    println!(
        "oracle: {:.1} kWh over {} steps ({} infeasible)",
        episode_energy(&log),
        log.steps.len(),
        infeasible
    );
    Ok(())
}

/// Fit and score the forecasting baselines on the held-out span.
pub fn cmd_forecast(cfg: &AppConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let model = fit_forecaster(cfg)?;
    let bundle = build_trace(cfg, Span::Eval)?;

    let mut text = String::from("forecast benchmark (held-out span)\n");
    text.push_str("===================================\n");
    let mut csv = String::from("model,nmae\n");
    let horizon = cfg.forecast.horizon;

    let forecasters: Vec<(&str, Arc<dyn Forecaster>)> = vec![
        ("persistence", Arc::new(PersistenceForecaster)),
        ("seasonal_naive", Arc::new(SeasonalNaiveForecaster::default())),
        ("lag_regression", Arc::new(model.clone())),
    ];

    for (name, fc) in &forecasters {
        let err = heldout_nmae(fc.as_ref(), &bundle, horizon)?;
        text.push_str(&format!("{name:<16} NMAE {err:.4}\n"));
        csv.push_str(&format!("{name},{}\n", io::fmt(err)));
    }
    text.push_str(&format!(
        "\nreference NMAE from the original field deployment: {} (proprietary data, not reproducible here)\n",
        io::fmt(cfg.benchmark.reference_forecast_nmae)
    ));

    // Export one example 48-step forecast next to the truth.
    let t = bundle.warmup_steps;
    let req = ForecastRequest {
        load_window: &bundle.series.load_kw[t - model.config.window..t],
        exog_window: &bundle.exog.slice(t - model.config.window..t),
        horizon,
        first_step_of_day: t % STEPS_PER_DAY,
    };
    let f = model.forecast(&req)?;
    io::write_forecast(
        &out.join("example_forecast.csv"),
        bundle.series.timestamp(t),
        bundle.series.step_minutes,
        &f.load_kw,
    )?;

    std::fs::write(out.join("forecast_report.txt"), &text)?;
    std::fs::write(out.join("forecast_report.csv"), &csv)?;
    print!("{text}");
    Ok(())
}

/// Rolling-origin NMAE of a forecaster over the evaluation region.
pub fn heldout_nmae(model: &dyn Forecaster, bundle: &TraceBundle, horizon: usize) -> Result<f64> {
    let window = model.min_window().max(1);
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    let mut t = bundle.warmup_steps;
    while t + horizon <= bundle.series.len() {
        let lo = t.saturating_sub(window);
        let req = ForecastRequest {
            load_window: &bundle.series.load_kw[lo..t],
            exog_window: &bundle.exog.slice(lo..t),
            horizon,
            first_step_of_day: t % STEPS_PER_DAY,
        };
        let f = model.forecast(&req)?;
        preds.extend(f.load_kw);
        truth.extend_from_slice(&bundle.series.load_kw[t..t + horizon]);
        t += horizon;
    }
    nmae(&preds, &truth)
}

/// Convenience used by tests: evaluate a trained checkpoint on the
/// benchmark trace and return its per-step log.
pub fn evaluate_checkpoint(
    cfg: &AppConfig,
    ckpt: &Checkpoint,
    variant: Variant,
) -> Result<chiller_core::env::EpisodeLog> {
    let bundle = build_trace(cfg, Span::Eval)?;
    let train_bundle = build_trace(cfg, Span::Train)?;
    let mut reward = cfg.reward.resolve(&cfg.plant)?;
    reward.power_scale_kw = calibrate_power_scale(cfg, &train_bundle)?;
    let mut ctl = build_rl_controller(cfg, ckpt, variant)?;
    Ok(evaluate_controller(&cfg.plant, &reward, &bundle, &mut ctl)?.0)
}

/// Convenience used by tests: the synthetic load series of a span.
pub fn span_loads(cfg: &AppConfig, span: Span) -> Result<LoadSeries> {
    let bundle = build_trace(cfg, span)?;
    Ok(LoadSeries {
        start: bundle.series.timestamp(bundle.warmup_steps),
        step_minutes: bundle.series.step_minutes,
        load_kw: bundle.region_loads().to_vec(),
    })
}

/// Shared helper for pipeline consumers that need the fitted model.
pub fn fitted_forecaster(cfg: &AppConfig) -> Result<chiller_core::forecast::LagRegressionForecaster> {
    pipeline::fit_forecaster(cfg)
}
