//! Brute-force per-step dispatch minimizer.
//!
//! For a single building load the oracle enumerates every ON/OFF subset of
//! the bank, grids the total flow over the loop-temperature-feasible band
//! and the load split over the simplex, evaluates the full physics and
//! constraint check for each candidate, and keeps the feasible candidate
//! with minimal electrical power. A local refinement pass polishes the
//! winning split so that randomly sampled feasible actions cannot undercut
//! the reported optimum by more than float noise.
//!
//! Two structural facts keep this cheap: with a proportional load split the
//! per-chiller cooling (and therefore power, part-load ratio and COP)
//! depends only on the split fractions, never on the total flow; and the
//! total flow only moves the return temperature. So for each split the scan
//! can stop at the lowest feasible flow point, which is also exactly what
//! the minimal-total-flow tie-break wants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::plant::{
    check_constraints, steady_state_dispatch, ChillerAction, ConstraintReport,
    ConstraintTolerances, PlantConfig, PlantTelemetry,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Among equal-power candidates prefer the lowest total flow, then the
    /// fewest running chillers.
    MinTotalFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Number of grid points per free split coordinate.
    pub split_grid: usize,
    /// Number of grid points for the total flow.
    pub flow_grid: usize,
    pub tie_break: TieBreak,
    /// Refine the best split of each subset with a local line search.
    pub polish: bool,
    pub tolerances: ConstraintTolerances,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            split_grid: 51,
            flow_grid: 101,
            tie_break: TieBreak::MinTotalFlow,
            polish: true,
            tolerances: ConstraintTolerances::default(),
        }
    }
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if self.split_grid < 2 || self.flow_grid < 2 {
            return Err(CoreError::config("oracle grids must have at least 2 points"));
        }
        Ok(())
    }
}

/// One resolved dispatch candidate returned by the oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub action: ChillerAction,
    pub telemetry: PlantTelemetry,
    pub report: ConstraintReport,
    pub feasible: bool,
    pub total_power_kw: f64,
}

#[derive(Clone)]
struct Candidate {
    flows: Vec<f64>,
    telemetry: PlantTelemetry,
    report: ConstraintReport,
    power: f64,
    total_flow: f64,
    n_on: usize,
    violation: f64,
}

impl Candidate {
    fn feasible_key(&self) -> (f64, f64, usize) {
        (self.power, self.total_flow, self.n_on)
    }

    fn violation_key(&self) -> (f64, f64, f64) {
        (self.violation, self.power, self.total_flow)
    }
}

fn lex3_less<A: PartialOrd, B: PartialOrd, C: PartialOrd>(a: &(A, B, C), b: &(A, B, C)) -> bool {
    if a.0 != b.0 {
        return a.0 < b.0;
    }
    if a.1 != b.1 {
        return a.1 < b.1;
    }
    a.2 < b.2
}

struct SubsetScan {
    best_feasible: Option<Candidate>,
    best_violation: Option<Candidate>,
}

fn evaluate(
    config: &PlantConfig,
    tol: &ConstraintTolerances,
    flows: Vec<f64>,
    load: f64,
) -> Result<Candidate> {
    let action = ChillerAction::from_flows(flows);
    let telemetry = steady_state_dispatch(config, &action, load)?;
    let report = check_constraints(config, &telemetry, &action, tol);
    Ok(Candidate {
        total_flow: action.total_flow_kgs(),
        n_on: action.n_on(),
        power: telemetry.total_power_kw,
        violation: report.total_violation(),
        flows: action.flows_kgs,
        telemetry,
        report,
    })
}

fn consider(scan: &mut SubsetScan, cand: Candidate) {
    if cand.report.all_satisfied() {
        let better = match &scan.best_feasible {
            None => true,
            Some(best) => lex3_less(&cand.feasible_key(), &best.feasible_key()),
        };
        if better {
            scan.best_feasible = Some(cand.clone());
        }
    }
    let better = match &scan.best_violation {
        None => true,
        Some(best) => lex3_less(&cand.violation_key(), &best.violation_key()),
    };
    if better {
        scan.best_violation = Some(cand);
    }
}

/// Enumerate the simplex grid for `k` ON chillers with `points` levels per
/// free coordinate. Returns share vectors that sum to one.
fn simplex_grid(k: usize, points: usize) -> Vec<Vec<f64>> {
    let step = 1.0 / (points - 1) as f64;
    match k {
        1 => vec![vec![1.0]],
        2 => (0..points)
            .map(|i| {
                let s = i as f64 * step;
                vec![s, 1.0 - s]
            })
            .collect(),
        3 => {
            let mut out = Vec::new();
            for i in 0..points {
                let s1 = i as f64 * step;
                for j in 0..points {
                    let s2 = j as f64 * step;
                    if s1 + s2 <= 1.0 + 1e-12 {
                        out.push(vec![s1, s2, (1.0 - s1 - s2).max(0.0)]);
                    }
                }
            }
            out
        }
        _ => {
            let mut out = Vec::new();
            for i in 0..points {
                let s1 = i as f64 * step;
                for j in 0..points {
                    let s2 = j as f64 * step;
                    if s1 + s2 > 1.0 + 1e-12 {
                        continue;
                    }
                    for l in 0..points {
                        let s3 = l as f64 * step;
                        if s1 + s2 + s3 <= 1.0 + 1e-12 {
                            out.push(vec![s1, s2, s3, (1.0 - s1 - s2 - s3).max(0.0)]);
                        }
                    }
                }
            }
            out
        }
    }
}

/// Bank power for a subset at the given shares, ignoring flow feasibility.
/// Used only to steer the polish; every accepted candidate is re-validated
/// through the full dispatch and constraint check.
fn split_power(config: &PlantConfig, members: &[usize], shares: &[f64], load: f64) -> f64 {
    let mut total = 0.0;
    for (&m, &s) in members.iter().zip(shares) {
        let ch = &config.chillers[m];
        let q = (load * s).min(config.plr_max * ch.rated_kw);
        let plr = q / ch.rated_kw;
        let [a, b, c, d] = ch.power_coeffs;
        total += (a + b * plr + c * plr * plr + d * plr * plr * plr).max(0.0);
    }
    total
}

struct SubsetContext<'a> {
    config: &'a PlantConfig,
    tol: &'a ConstraintTolerances,
    members: Vec<usize>,
    load: f64,
    /// Total-flow band from the return-temperature range.
    band_lo: f64,
    band_hi: f64,
    flow_lo: f64,
    flow_hi: f64,
}

impl<'a> SubsetContext<'a> {
    fn new(config: &'a PlantConfig, tol: &'a ConstraintTolerances, mask: u32, load: f64) -> Self {
        let members: Vec<usize> = (0..config.n_chillers())
            .filter(|i| mask & (1 << i) != 0)
            .collect();
        let flow_lo: f64 = members
            .iter()
            .map(|&m| config.chillers[m].flow_min_kgs)
            .sum();
        let flow_hi: f64 = members
            .iter()
            .map(|&m| config.chillers[m].flow_max_kgs)
            .sum();
        let (band_lo, band_hi) = if load > 0.0 {
            (
                load / (config.c_w * (config.t_return_max_c - config.t_supply_c)),
                load / (config.c_w * (config.t_return_min_c - config.t_supply_c)),
            )
        } else {
            (0.0, f64::INFINITY)
        };
        SubsetContext {
            config,
            tol,
            members,
            load,
            band_lo,
            band_hi,
            flow_lo,
            flow_hi,
        }
    }

    /// Flow interval over which these shares keep every member inside its
    /// flow envelope and the loop inside its temperature band.
    fn flow_interval(&self, shares: &[f64]) -> Option<(f64, f64)> {
        let mut lo = self.flow_lo.max(self.band_lo);
        let mut hi = self.flow_hi.min(self.band_hi);
        for (&m, &s) in self.members.iter().zip(shares) {
            if s <= 1e-12 {
                return None;
            }
            let ch = &self.config.chillers[m];
            lo = lo.max(ch.flow_min_kgs / s);
            hi = hi.min(ch.flow_max_kgs / s);
        }
        (lo <= hi + 1e-9).then_some((lo, hi.max(lo)))
    }

    fn flows_at(&self, shares: &[f64], total: f64) -> Vec<f64> {
        let mut flows = vec![0.0; self.config.n_chillers()];
        for (&m, &s) in self.members.iter().zip(shares) {
            let ch = &self.config.chillers[m];
            flows[m] = (s * total).clamp(ch.flow_min_kgs, ch.flow_max_kgs);
        }
        flows
    }

    /// Evaluate one share vector at its minimal feasible grid flow.
    fn scan_shares(&self, shares: &[f64], m_grid: &[f64], scan: &mut SubsetScan) -> Result<()> {
        match self.flow_interval(shares) {
            Some((lo, hi)) => {
                // Lowest grid point inside the interval; power does not
                // depend on the flow so this is the tie-break optimum.
                let total = m_grid
                    .iter()
                    .copied()
                    .find(|&m| m >= lo - 1e-9 && m <= hi + 1e-9)
                    .unwrap_or(lo);
                let cand = evaluate(self.config, self.tol, self.flows_at(shares, total), self.load)?;
                consider(scan, cand);
            }
            None => {
                // Keep one clamped evaluation around for violation
                // diagnostics.
                let total = self.flow_lo.max(self.band_lo.min(self.flow_hi));
                let cand = evaluate(self.config, self.tol, self.flows_at(shares, total), self.load)?;
                consider(scan, cand);
            }
        }
        Ok(())
    }

    /// Coordinate line search over share pairs starting from a feasible
    /// seed. Each accepted move is re-validated through the full check.
    fn polish(&self, seed: &Candidate, scan: &mut SubsetScan) -> Result<()> {
        let k = self.members.len();
        if k < 2 {
            return Ok(());
        }
        let seed_total: f64 = seed.flows.iter().sum();
        let mut shares: Vec<f64> = self
            .members
            .iter()
            .map(|&m| seed.flows[m] / seed_total)
            .collect();
        let mut best_power = split_power(self.config, &self.members, &shares, self.load);

        for _sweep in 0..12 {
            let mut improved = false;
            for i in 0..k {
                for j in (i + 1)..k {
                    let pool = shares[i] + shares[j];
                    if pool <= 1e-9 {
                        continue;
                    }
                    // 1-D scan of the transfer fraction, then golden-section
                    // inside the best bracket.
                    let eval_t = |t: f64| {
                        let mut s = shares.clone();
                        s[i] = pool * t;
                        s[j] = pool * (1.0 - t);
                        (split_power(self.config, &self.members, &s, self.load), s)
                    };
                    let coarse = 64;
                    let mut best_t = shares[i] / pool;
                    let mut best_val = best_power;
                    for step in 0..=coarse {
                        let t = step as f64 / coarse as f64;
                        let (p, s) = eval_t(t);
                        if p < best_val && self.flow_interval(&s).is_some() {
                            best_val = p;
                            best_t = t;
                        }
                    }
                    let (mut a, mut b) = (
                        (best_t - 1.0 / coarse as f64).max(0.0),
                        (best_t + 1.0 / coarse as f64).min(1.0),
                    );
                    let phi = 0.5 * (3.0 - 5f64.sqrt());
                    for _ in 0..80 {
                        let x1 = a + phi * (b - a);
                        let x2 = b - phi * (b - a);
                        let p1 = eval_t(x1).0;
                        let p2 = eval_t(x2).0;
                        if p1 < p2 {
                            b = x2;
                        } else {
                            a = x1;
                        }
                    }
                    let t = 0.5 * (a + b);
                    let (p, s) = eval_t(t);
                    if p < best_power - 1e-12 && self.flow_interval(&s).is_some() {
                        shares = s;
                        best_power = p;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }

        if let Some((lo, _)) = self.flow_interval(&shares) {
            let cand = evaluate(self.config, self.tol, self.flows_at(&shares, lo), self.load)?;
            consider(scan, cand);
        }
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn scan_subset(
    config: &PlantConfig,
    oracle_cfg: &OracleConfig,
    mask: u32,
    load: f64,
) -> Result<SubsetScan> {
    let ctx = SubsetContext::new(config, &oracle_cfg.tolerances, mask, load);
    let mut scan = SubsetScan {
        best_feasible: None,
        best_violation: None,
    };

    let m_lo = ctx.flow_lo.max(ctx.band_lo);
    let m_hi = ctx.flow_hi.min(ctx.band_hi.min(ctx.flow_hi));
    let m_grid = if m_lo <= m_hi {
        linspace(m_lo, m_hi, oracle_cfg.flow_grid)
    } else {
        vec![ctx.flow_lo]
    };

    for shares in simplex_grid(ctx.members.len(), oracle_cfg.split_grid) {
        ctx.scan_shares(&shares, &m_grid, &mut scan)?;
    }

    if oracle_cfg.polish {
        if let Some(seed) = scan.best_feasible.clone() {
            ctx.polish(&seed, &mut scan)?;
        }
    }
    Ok(scan)
}

fn solution_from(cand: Candidate, feasible: bool) -> DispatchSolution {
    DispatchSolution {
        action: ChillerAction::from_flows(cand.flows),
        total_power_kw: cand.power,
        feasible,
        telemetry: cand.telemetry,
        report: cand.report,
    }
}

/// Minimal-power dispatch for one building load.
///
/// Returns the feasible candidate with minimal total power (ties broken by
/// minimal total flow, then fewest ON chillers). When no candidate satisfies
/// every constraint the result carries `feasible = false` together with the
/// least-violating candidate for diagnostics.
pub fn optimal_dispatch(
    config: &PlantConfig,
    oracle_cfg: &OracleConfig,
    building_load_kw: f64,
) -> Result<DispatchSolution> {
    oracle_cfg.validate()?;
    if !building_load_kw.is_finite() || building_load_kw < 0.0 {
        return Err(CoreError::invalid(format!(
            "building load must be finite and non-negative, got {building_load_kw}"
        )));
    }

    let n = config.n_chillers();

    // An idle bank already covers loads inside the energy-balance tolerance.
    if building_load_kw <= oracle_cfg.tolerances.energy_kw {
        let cand = evaluate(
            config,
            &oracle_cfg.tolerances,
            vec![0.0; n],
            building_load_kw,
        )?;
        let feasible = cand.report.all_satisfied();
        return Ok(solution_from(cand, feasible));
    }

    let masks: Vec<u32> = (1..(1u32 << n)).collect();
    let scans: Vec<SubsetScan> = masks
        .par_iter()
        .map(|&mask| scan_subset(config, oracle_cfg, mask, building_load_kw))
        .collect::<Result<Vec<_>>>()?;

    let mut best_feasible: Option<Candidate> = None;
    let mut best_violation: Option<Candidate> = None;
    for scan in scans {
        if let Some(c) = scan.best_feasible {
            let better = match &best_feasible {
                None => true,
                Some(b) => lex3_less(&c.feasible_key(), &b.feasible_key()),
            };
            if better {
                best_feasible = Some(c);
            }
        }
        if let Some(c) = scan.best_violation {
            let better = match &best_violation {
                None => true,
                Some(b) => lex3_less(&c.violation_key(), &b.violation_key()),
            };
            if better {
                best_violation = Some(c);
            }
        }
    }

    match best_feasible {
        Some(c) => Ok(solution_from(c, true)),
        None => {
            let c = best_violation.ok_or_else(|| {
                CoreError::numeric("oracle produced no candidates".to_string())
            })?;
            Ok(solution_from(c, false))
        }
    }
}

/// Independent per-step optimal dispatch over a load trajectory. The summed
/// energy is a lower bound for any controller that satisfies the same
/// per-step constraints.
pub fn lower_bound_trajectory(
    config: &PlantConfig,
    oracle_cfg: &OracleConfig,
    loads_kw: &[f64],
) -> Result<Vec<DispatchSolution>> {
    for &l in loads_kw {
        if !l.is_finite() || l < 0.0 {
            return Err(CoreError::invalid(format!(
                "loads must be finite and non-negative, got {l}"
            )));
        }
    }
    loads_kw
        .par_iter()
        .map(|&l| optimal_dispatch(config, oracle_cfg, l))
        .collect()
}
