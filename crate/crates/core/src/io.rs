//! Delimited-text input/output: load/weather traces, episode logs, training
//! curves and forecast tables. All files carry a header row and are
//! comma-separated.

use std::path::Path;

use chrono::NaiveDateTime;

use crate::env::EpisodeLog;
use crate::error::{CoreError, Result};
use crate::forecast::{ExogSeries, LoadSeries};
use crate::ppo::train::BatchStats;

const TIMESTAMP_FMT: &str = "%Y-%m-%dT%H:%M:%S";

/// Write a load trace with its weather channels.
pub fn write_trace(path: &Path, load: &LoadSeries, exog: &ExogSeries) -> Result<()> {
    exog.validate(load.len())?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "timestamp", "load_kw", "wind_mps", "wind_deg", "temp_c", "rh_pct", "ghi_wm2",
    ])?;
    for i in 0..load.len() {
        w.write_record([
            load.timestamp(i).format(TIMESTAMP_FMT).to_string(),
            fmt(load.load_kw[i]),
            fmt(exog.wind_mps[i]),
            fmt(exog.wind_deg[i]),
            fmt(exog.temp_c[i]),
            fmt(exog.rh_pct[i]),
            fmt(exog.ghi_wm2[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a trace written by [`write_trace`].
pub fn read_trace(path: &Path) -> Result<(LoadSeries, ExogSeries)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut start: Option<NaiveDateTime> = None;
    let mut second: Option<NaiveDateTime> = None;
    let mut load = Vec::new();
    let mut exog = ExogSeries::default();
    for record in r.records() {
        let record = record?;
        if record.len() != 7 {
            return Err(CoreError::config(format!(
                "trace rows need 7 fields, got {}",
                record.len()
            )));
        }
        let ts = NaiveDateTime::parse_from_str(&record[0], TIMESTAMP_FMT)
            .map_err(|e| CoreError::config(format!("bad timestamp '{}': {e}", &record[0])))?;
        if start.is_none() {
            start = Some(ts);
        } else if second.is_none() {
            second = Some(ts);
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| CoreError::config(format!("bad number '{}': {e}", &record[i])))
        };
        load.push(num(1)?);
        exog.wind_mps.push(num(2)?);
        exog.wind_deg.push(num(3)?);
        exog.temp_c.push(num(4)?);
        exog.rh_pct.push(num(5)?);
        exog.ghi_wm2.push(num(6)?);
    }
    let start = start.ok_or_else(|| CoreError::config("trace file is empty"))?;
    let step_minutes = match second {
        Some(s) => {
            let d = (s - start).num_minutes();
            if d <= 0 {
                return Err(CoreError::config("timestamps must strictly increase"));
            }
            d as u32
        }
        None => 30,
    };
    let series = LoadSeries {
        start,
        step_minutes,
        load_kw: load,
    };
    series.validate()?;
    exog.validate(series.len())?;
    Ok((series, exog))
}

/// Forecast table in the same layout as a trace's first two columns.
pub fn write_forecast(path: &Path, start: NaiveDateTime, step_minutes: u32, load_kw: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "load_kw"])?;
    for (i, v) in load_kw.iter().enumerate() {
        let ts = start + chrono::Duration::minutes(step_minutes as i64 * i as i64);
        w.write_record([ts.format(TIMESTAMP_FMT).to_string(), fmt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step controller log.
pub fn write_episode_log(path: &Path, log: &EpisodeLog, n_chillers: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec!["step".into(), "load_kw".into()];
    for i in 1..=n_chillers {
        header.push(format!("flow_{i}_kgs"));
    }
    for i in 1..=n_chillers {
        header.push(format!("plr_{i}"));
    }
    for i in 1..=n_chillers {
        header.push(format!("power_{i}_kw"));
    }
    header.extend(
        [
            "t_return_c",
            "total_power_kw",
            "reward",
            "active_component",
            "hard_violation",
            "energy_kwh",
            "unmet_load_kw",
            "fell_back",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for s in &log.steps {
        let mut row: Vec<String> = vec![s.step.to_string(), fmt(s.load_kw)];
        for i in 0..n_chillers {
            row.push(fmt(s.flows_kgs.get(i).copied().unwrap_or(0.0)));
        }
        for i in 0..n_chillers {
            row.push(fmt(s.plr.get(i).copied().unwrap_or(0.0)));
        }
        for i in 0..n_chillers {
            row.push(fmt(s.power_kw.get(i).copied().unwrap_or(0.0)));
        }
        row.push(fmt(s.t_return_c));
        row.push(fmt(s.total_power_kw));
        row.push(fmt(s.reward));
        row.push(s.active_component.clone());
        row.push(s.hard_violation.to_string());
        row.push(fmt(s.energy_kwh));
        row.push(fmt(s.unmet_load_kw));
        row.push(s.fell_back.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Training curve table.
pub fn write_training_curve(path: &Path, curve: &[BatchStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "batch",
        "steps",
        "episodes",
        "mean_return",
        "mean_step_reward",
        "clip_fraction",
        "approx_kl",
        "policy_loss",
        "value_loss",
        "entropy",
        "hard_violation_frac",
        "mean_step_energy_kwh",
    ])?;
    for s in curve {
        w.write_record([
            s.batch.to_string(),
            s.steps.to_string(),
            s.episodes.to_string(),
            fmt(s.mean_return),
            fmt(s.mean_step_reward),
            fmt(s.clip_fraction),
            fmt(s.approx_kl),
            fmt(s.policy_loss),
            fmt(s.value_loss),
            fmt(s.entropy),
            fmt(s.hard_violation_frac),
            fmt(s.mean_step_energy_kwh),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-precision float formatting keeps re-runs byte-identical.
pub fn fmt(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let s = format!("{v:.6}");
    // Trim trailing zeros but keep at least one decimal digit trimmed form.
    let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s
    }
}

/// Per-chiller part-load/power samples for curve fitting: `plr,power_kw`.
pub fn read_plr_samples(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() < 2 {
            return Err(CoreError::config("sample rows need plr,power_kw"));
        }
        let plr: f64 = record[0]
            .parse()
            .map_err(|e| CoreError::config(format!("bad plr '{}': {e}", &record[0])))?;
        let power: f64 = record[1]
            .parse()
            .map_err(|e| CoreError::config(format!("bad power '{}': {e}", &record[1])))?;
        out.push((plr, power));
    }
    Ok(out)
}

pub fn write_plr_samples(path: &Path, samples: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["plr", "power_kw"])?;
    for (plr, power) in samples {
        w.write_record([fmt(*plr), fmt(*power)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::{synthetic_campus_load, CampusLoadParams};

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let (load, exog) = synthetic_campus_load(2, 5, &CampusLoadParams::default()).unwrap();
        write_trace(&path, &load, &exog).unwrap();
        let (load2, exog2) = read_trace(&path).unwrap();
        assert_eq!(load.len(), load2.len());
        assert_eq!(load.start, load2.start);
        assert_eq!(load2.step_minutes, 30);
        for i in 0..load.len() {
            assert!((load.load_kw[i] - load2.load_kw[i]).abs() < 1e-4);
            assert!((exog.temp_c[i] - exog2.temp_c[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn sample_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        let samples = vec![(0.2, 45.57), (0.5, 99.45), (1.0, 199.4694)];
        write_plr_samples(&path, &samples).unwrap();
        let back = read_plr_samples(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert!((back[2].1 - 199.4694).abs() < 1e-9);
    }

    #[test]
    fn fmt_is_stable() {
        assert_eq!(fmt(0.0), "0");
        assert_eq!(fmt(1.5), "1.5");
        assert_eq!(fmt(199.4694), "199.4694");
        assert_eq!(fmt(-0.000001), "-0.000001");
    }
}
