//! Benchmark comparison report: per-controller energy, savings against the
//! rule-based baseline, and constraint statistics. Rendering is fully
//! deterministic; no timestamps enter the report body.

use chiller_core::config::{AppConfig, ReferenceEnergies};
use chiller_core::env::EpisodeLog;
use chiller_core::error::{CoreError, Result};
use chiller_core::io::fmt;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct RowMetrics {
    pub name: String,
    pub energy_kwh: f64,
    pub saved_kwh: f64,
    pub saved_pct: f64,
    pub hard_violation_frac: f64,
    pub mean_on_plr: f64,
    pub mean_cop: f64,
    pub load_rmse_kw: f64,
    pub fell_back_steps: usize,
}

#[derive(Debug, Clone)]
pub enum RowResult {
    Metrics(RowMetrics),
    Failed { name: String, error: String },
}

impl RowResult {
    pub fn name(&self) -> &str {
        match self {
            RowResult::Metrics(m) => &m.name,
            RowResult::Failed { name, .. } => name,
        }
    }

    pub fn metrics(&self) -> Option<&RowMetrics> {
        match self {
            RowResult::Metrics(m) => Some(m),
            RowResult::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<RowResult>,
    pub seed: u64,
    pub config_hash: String,
    pub trace_id: String,
    pub steps: usize,
    pub dt_hours: f64,
    pub reference: ReferenceEnergies,
}

/// Aggregate an episode log into a report row. Savings are filled in later
/// against the baseline row.
pub fn summarize_log(name: &str, log: &EpisodeLog) -> RowMetrics {
    let steps = log.steps.len().max(1);
    let energy: f64 = log.steps.iter().map(|s| s.energy_kwh).sum();
    let mut plr_sum = 0.0;
    let mut plr_n = 0usize;
    let mut cop_sum = 0.0;
    let mut cop_n = 0usize;
    let mut sq_unmet = 0.0;
    let mut fell_back = 0usize;
    for s in &log.steps {
        for (i, &f) in s.flows_kgs.iter().enumerate() {
            if f > 0.0 {
                plr_sum += s.plr[i];
                plr_n += 1;
                if s.cop.get(i).copied().unwrap_or(0.0) > 0.0 {
                    cop_sum += s.cop[i];
                    cop_n += 1;
                }
            }
        }
        sq_unmet += s.unmet_load_kw * s.unmet_load_kw;
        if s.fell_back {
            fell_back += 1;
        }
    }
    RowMetrics {
        name: name.to_string(),
        energy_kwh: energy,
        saved_kwh: 0.0,
        saved_pct: 0.0,
        hard_violation_frac: log.hard_violation_fraction(),
        mean_on_plr: if plr_n > 0 { plr_sum / plr_n as f64 } else { 0.0 },
        mean_cop: if cop_n > 0 { cop_sum / cop_n as f64 } else { 0.0 },
        load_rmse_kw: (sq_unmet / steps as f64).sqrt(),
        fell_back_steps: fell_back,
    }
}

/// Fill the savings columns of every row against the named baseline.
pub fn apply_savings(rows: &mut [RowResult], baseline: &str) -> Result<()> {
    let base_energy = rows
        .iter()
        .find(|r| r.name() == baseline)
        .and_then(|r| r.metrics())
        .map(|m| m.energy_kwh)
        .ok_or_else(|| CoreError::config(format!("missing baseline row '{baseline}'")))?;
    for row in rows.iter_mut() {
        if let RowResult::Metrics(m) = row {
            m.saved_kwh = base_energy - m.energy_kwh;
            m.saved_pct = if base_energy > 0.0 {
                100.0 * m.saved_kwh / base_energy
            } else {
                0.0
            };
        }
    }
    Ok(())
}

pub fn config_hash(cfg: &AppConfig) -> Result<String> {
    let canonical = cfg.canonical_toml()?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(hex_string(&hasher.finalize()))
}

pub fn trace_id(loads: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for l in loads {
        hasher.update(l.to_bits().to_le_bytes());
    }
    hex_string(&hasher.finalize())[..16].to_string()
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("chiller plant benchmark comparison\n");
        out.push_str("==================================\n");
        out.push_str(&format!("seed        = {}\n", self.seed));
        out.push_str(&format!("config_hash = {}\n", self.config_hash));
        out.push_str(&format!("trace_id    = {}\n", self.trace_id));
        out.push_str(&format!(
            "trace       = {} steps at {} h per step\n\n",
            self.steps, self.dt_hours
        ));
        out.push_str(&format!(
            "{:<22} {:>12} {:>12} {:>8} {:>10} {:>9} {:>9} {:>10}\n",
            "controller",
            "energy_kwh",
            "saved_kwh",
            "saved_%",
            "hard_viol",
            "mean_plr",
            "mean_cop",
            "rmse_kw"
        ));
        for row in &self.rows {
            match row {
                RowResult::Metrics(m) => {
                    out.push_str(&format!(
                        "{:<22} {:>12} {:>12} {:>8} {:>10} {:>9} {:>9} {:>10}\n",
                        m.name,
                        format!("{:.1}", m.energy_kwh),
                        format!("{:.1}", m.saved_kwh),
                        format!("{:.2}", m.saved_pct),
                        format!("{:.4}", m.hard_violation_frac),
                        format!("{:.3}", m.mean_on_plr),
                        format!("{:.3}", m.mean_cop),
                        format!("{:.1}", m.load_rmse_kw),
                    ));
                }
                RowResult::Failed { name, error } => {
                    out.push_str(&format!("{name:<22} ERROR: {error}\n"));
                }
            }
        }
        out.push('\n');
        out.push_str(&format!(
            "reference (field study, two-month totals, not reproducible here):\n  rule_based {} MWh, one_step_rl {} MWh, receding_horizon_rl {} MWh\n  note: {}\n",
            fmt(self.reference.rule_based_mwh),
            fmt(self.reference.one_step_rl_mwh),
            fmt(self.reference.receding_horizon_rl_mwh),
            self.reference.note,
        ));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "controller,energy_kwh,saved_kwh,saved_pct,hard_violation_frac,mean_on_plr,mean_cop,load_rmse_kw,fell_back_steps,error\n",
        );
        for row in &self.rows {
            match row {
                RowResult::Metrics(m) => out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},\n",
                    m.name,
                    fmt(m.energy_kwh),
                    fmt(m.saved_kwh),
                    fmt(m.saved_pct),
                    fmt(m.hard_violation_frac),
                    fmt(m.mean_on_plr),
                    fmt(m.mean_cop),
                    fmt(m.load_rmse_kw),
                    m.fell_back_steps,
                )),
                RowResult::Failed { name, error } => {
                    out.push_str(&format!("{name},,,,,,,,,\"{error}\"\n"));
                }
            }
        }
        out
    }
}
