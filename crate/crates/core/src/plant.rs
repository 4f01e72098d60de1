//! Steady-state physics and constraint evaluation for a heterogeneous
//! chiller bank.
//!
//! All operations here are pure functions of their inputs and safe to call
//! concurrently. Units are kW (cooling and electrical power), kg/s (chilled
//! water mass flow), degrees Celsius, and kJ/(kg K) for the water heat
//! capacity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// One chiller: rated capacity, flow limits, COP validity cap and the cubic
/// power curve `P(plr) = a + b*plr + c*plr^2 + d*plr^3` in kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChillerSpec {
    pub id: u8,
    pub rated_kw: f64,
    pub flow_min_kgs: f64,
    pub flow_max_kgs: f64,
    /// Highest COP the fitted power curve is trusted for. Operating points
    /// with a higher implied COP are flagged by [`check_constraints`].
    pub cop_max: f64,
    /// Cubic coefficients `[a, b, c, d]`, power in kW as a function of the
    /// dimensionless part-load ratio.
    pub power_coeffs: [f64; 4],
    /// Goodness of fit of the power curve, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<f64>,
}

impl ChillerSpec {
    /// Raw cubic evaluation, no domain checks.
    fn cubic(&self, plr: f64) -> f64 {
        let [a, b, c, d] = self.power_coeffs;
        a + b * plr + c * plr * plr + d * plr * plr * plr
    }

    fn validate(&self, plr_min: f64, plr_max: f64) -> Result<()> {
        if !(self.rated_kw > 0.0) {
            return Err(CoreError::invalid(format!(
                "chiller {}: rated capacity must be positive",
                self.id
            )));
        }
        if !(self.flow_min_kgs > 0.0 && self.flow_min_kgs < self.flow_max_kgs) {
            return Err(CoreError::invalid(format!(
                "chiller {}: need 0 < flow_min < flow_max",
                self.id
            )));
        }
        if !(self.cop_max > 0.0) {
            return Err(CoreError::invalid(format!(
                "chiller {}: cop_max must be positive",
                self.id
            )));
        }
        // The fitted curve must predict positive power over the trusted
        // part-load range.
        let hi = plr_max.min(1.0);
        let mut plr = plr_min;
        while plr <= hi + 1e-12 {
            if self.cubic(plr) <= 0.0 {
                return Err(CoreError::invalid(format!(
                    "chiller {}: power curve non-positive at plr={plr:.3}",
                    self.id
                )));
            }
            plr += 1e-3;
        }
        Ok(())
    }
}

/// The chiller bank plus shared loop constants and operating bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub chillers: Vec<ChillerSpec>,
    /// Chilled-water supply temperature, held fixed while any chiller runs.
    pub t_supply_c: f64,
    /// Specific heat capacity of water, kJ/(kg K).
    pub c_w: f64,
    pub plr_min: f64,
    pub plr_max: f64,
    pub t_return_min_c: f64,
    pub t_return_max_c: f64,
    /// Hours per control step.
    pub dt_hours: f64,
}

impl PlantConfig {
    pub fn n_chillers(&self) -> usize {
        self.chillers.len()
    }

    pub fn total_rated_kw(&self) -> f64 {
        self.chillers.iter().map(|c| c.rated_kw).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.chillers.is_empty() {
            return Err(CoreError::invalid("plant needs at least one chiller"));
        }
        if !(self.t_supply_c < self.t_return_min_c && self.t_return_min_c < self.t_return_max_c) {
            return Err(CoreError::invalid(
                "need t_supply < t_return_min < t_return_max",
            ));
        }
        if !(self.plr_min > 0.0 && self.plr_min < self.plr_max) {
            return Err(CoreError::invalid("need 0 < plr_min < plr_max"));
        }
        if !(self.c_w > 0.0) {
            return Err(CoreError::invalid("c_w must be positive"));
        }
        if !(self.dt_hours > 0.0) {
            return Err(CoreError::invalid("dt_hours must be positive"));
        }
        for ch in &self.chillers {
            ch.validate(self.plr_min, self.plr_max)?;
        }
        Ok(())
    }

    /// The four-chiller campus plant used throughout the benchmarks:
    /// three 1700 kW machines and one 710 kW machine sharing a common
    /// chilled-water loop at 6 degC supply.
    pub fn campus() -> Self {
        let rows = [
            (1u8, 1700.0, 50.8, 10.0, [33.3469, -7.3826, 384.8817, -211.3766], Some(0.9332)),
            (2, 1700.0, 50.8, 10.0, [78.6233, -147.0632, 454.0039, -158.7085], Some(0.8699)),
            (3, 1700.0, 50.8, 10.0, [39.5435, 103.8645, -53.5269, 120.3910], Some(0.9120)),
            (4, 710.0, 21.2, 5.814, [27.0384, -115.1061, 261.4245, -84.0566], None),
        ];
        let chillers = rows
            .into_iter()
            .map(|(id, rated, fmax, cop, coeffs, r2)| ChillerSpec {
                id,
                rated_kw: rated,
                flow_min_kgs: 14.5,
                flow_max_kgs: fmax,
                cop_max: cop,
                power_coeffs: coeffs,
                r_squared: r2,
            })
            .collect();
        PlantConfig {
            chillers,
            t_supply_c: 6.0,
            c_w: 4.186,
            plr_min: 0.2,
            plr_max: 10.0,
            t_return_min_c: 6.56,
            t_return_max_c: 14.0,
            dt_hours: 0.5,
        }
    }
}

/// Per-chiller mass-flow setpoints after decoding. A zero flow means OFF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChillerAction {
    pub flows_kgs: Vec<f64>,
}

impl ChillerAction {
    pub fn from_flows(flows_kgs: Vec<f64>) -> Self {
        ChillerAction { flows_kgs }
    }

    pub fn all_off(n: usize) -> Self {
        ChillerAction {
            flows_kgs: vec![0.0; n],
        }
    }

    /// Decode requested flows into a valid action: requests below half the
    /// minimum flow switch the chiller OFF, requests between half-minimum
    /// and minimum are clamped up to the minimum, and everything above is
    /// clamped to the maximum. This gives a continuous policy a reachable
    /// OFF region while keeping ON chillers inside their flow envelope.
    pub fn decode(requested_kgs: &[f64], config: &PlantConfig) -> Self {
        let flows = requested_kgs
            .iter()
            .zip(&config.chillers)
            .map(|(&f, ch)| {
                if !f.is_finite() || f < 0.5 * ch.flow_min_kgs {
                    0.0
                } else if f < ch.flow_min_kgs {
                    ch.flow_min_kgs
                } else {
                    f.min(ch.flow_max_kgs)
                }
            })
            .collect();
        ChillerAction { flows_kgs: flows }
    }

    pub fn on_status(&self) -> Vec<bool> {
        self.flows_kgs.iter().map(|&f| f > 0.0).collect()
    }

    pub fn n_on(&self) -> usize {
        self.flows_kgs.iter().filter(|&&f| f > 0.0).count()
    }

    pub fn total_flow_kgs(&self) -> f64 {
        self.flows_kgs.iter().sum()
    }
}

/// Resolved per-step physics for one dispatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantTelemetry {
    pub t_return_c: f64,
    pub cooling_kw: Vec<f64>,
    pub plr: Vec<f64>,
    pub power_kw: Vec<f64>,
    pub cop: Vec<f64>,
    pub total_power_kw: f64,
    /// Signed residual of the energy balance: building load minus delivered
    /// cooling. Positive when the bank under-delivers.
    pub unmet_load_kw: f64,
    pub building_load_kw: f64,
}

/// Tolerances used when classifying a constraint as satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintTolerances {
    pub energy_kw: f64,
    pub temp_c: f64,
    pub ratio: f64,
    pub flow_kgs: f64,
}

impl Default for ConstraintTolerances {
    fn default() -> Self {
        ConstraintTolerances {
            energy_kw: 1.0,
            temp_c: 0.01,
            ratio: 1e-6,
            flow_kgs: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintId {
    EnergyBalance,
    TReturnRange,
    PlrRange,
    MinFlow,
    CopCap,
}

impl ConstraintId {
    pub const ALL: [ConstraintId; 5] = [
        ConstraintId::EnergyBalance,
        ConstraintId::TReturnRange,
        ConstraintId::PlrRange,
        ConstraintId::MinFlow,
        ConstraintId::CopCap,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ConstraintId::EnergyBalance => "energy_balance",
            ConstraintId::TReturnRange => "t_return_range",
            ConstraintId::PlrRange => "plr_range",
            ConstraintId::MinFlow => "min_flow",
            ConstraintId::CopCap => "cop_cap",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ConstraintId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CoreError::config(format!("unknown constraint id '{s}'")))
    }
}

impl std::fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub id: ConstraintId,
    pub satisfied: bool,
    /// Worst violation in the constraint's native units; zero when satisfied
    /// up to the configured tolerance.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub entries: Vec<ConstraintEntry>,
}

impl ConstraintReport {
    pub fn get(&self, id: ConstraintId) -> &ConstraintEntry {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .expect("report covers all constraint ids")
    }

    pub fn all_satisfied(&self) -> bool {
        self.entries.iter().all(|e| e.satisfied)
    }

    /// Sum of raw violation magnitudes, used to rank infeasible candidates.
    pub fn total_violation(&self) -> f64 {
        self.entries.iter().map(|e| e.violation).sum()
    }
}

/// Electrical power drawn by a chiller at the given part-load ratio.
pub fn power_from_plr(spec: &ChillerSpec, plr: f64) -> Result<f64> {
    if !plr.is_finite() || plr < 0.0 {
        return Err(CoreError::invalid(format!(
            "part-load ratio must be finite and non-negative, got {plr}"
        )));
    }
    Ok(spec.cubic(plr))
}

/// Ratio of cooling output to rated capacity.
pub fn part_load_ratio(cooling_kw: f64, rated_kw: f64) -> Result<f64> {
    if !(rated_kw > 0.0) {
        return Err(CoreError::invalid(format!(
            "rated capacity must be positive, got {rated_kw}"
        )));
    }
    if !cooling_kw.is_finite() || cooling_kw < 0.0 {
        return Err(CoreError::invalid(format!(
            "cooling must be finite and non-negative, got {cooling_kw}"
        )));
    }
    Ok(cooling_kw / rated_kw)
}

/// Return-water temperature of the common loop for a given building load
/// and total ON flow.
pub fn return_temperature(
    building_load_kw: f64,
    total_on_flow_kgs: f64,
    config: &PlantConfig,
) -> Result<f64> {
    if !building_load_kw.is_finite() || building_load_kw < 0.0 {
        return Err(CoreError::invalid(format!(
            "building load must be finite and non-negative, got {building_load_kw}"
        )));
    }
    if total_on_flow_kgs <= 0.0 {
        if building_load_kw > 0.0 {
            return Err(CoreError::NoFlowUnderLoad {
                load_kw: building_load_kw,
                flow_kgs: total_on_flow_kgs,
            });
        }
        return Ok(config.t_supply_c);
    }
    Ok(building_load_kw / (total_on_flow_kgs * config.c_w) + config.t_supply_c)
}

/// Resolve one steady-state step of the bank.
///
/// Pass 1 computes the loop return temperature over the ON flows and splits
/// the building load across ON chillers in proportion to their flow. Pass 2
/// caps any chiller whose implied part-load ratio exceeds `plr_max` at
/// `plr_max * rated`; the residual is surfaced as `unmet_load_kw`. Electrical
/// power follows each chiller's cubic curve, floored at zero since the fit
/// is an extrapolation outside its data range.
pub fn steady_state_dispatch(
    config: &PlantConfig,
    action: &ChillerAction,
    building_load_kw: f64,
) -> Result<PlantTelemetry> {
    let n = config.n_chillers();
    if action.flows_kgs.len() != n {
        return Err(CoreError::contract(format!(
            "action has {} flows for {} chillers",
            action.flows_kgs.len(),
            n
        )));
    }
    if !building_load_kw.is_finite() || building_load_kw < 0.0 {
        return Err(CoreError::invalid(format!(
            "building load must be finite and non-negative, got {building_load_kw}"
        )));
    }
    for (&f, ch) in action.flows_kgs.iter().zip(&config.chillers) {
        if !f.is_finite() || f < 0.0 {
            return Err(CoreError::invalid(format!(
                "chiller {}: flow must be finite and non-negative, got {f}",
                ch.id
            )));
        }
    }

    let total_flow: f64 = action.flows_kgs.iter().sum();
    if total_flow <= 0.0 {
        // Idle bank. With load pending, the loop heats up to the top of the
        // return-temperature range; with no load it sits at supply.
        let t_return = if building_load_kw > 0.0 {
            config.t_return_max_c
        } else {
            config.t_supply_c
        };
        return Ok(PlantTelemetry {
            t_return_c: t_return,
            cooling_kw: vec![0.0; n],
            plr: vec![0.0; n],
            power_kw: vec![0.0; n],
            cop: vec![0.0; n],
            total_power_kw: 0.0,
            unmet_load_kw: building_load_kw,
            building_load_kw,
        });
    }

    let t_return = return_temperature(building_load_kw, total_flow, config)?;

    let mut cooling = vec![0.0; n];
    let mut plr = vec![0.0; n];
    let mut power = vec![0.0; n];
    let mut cop = vec![0.0; n];

    for i in 0..n {
        let flow = action.flows_kgs[i];
        if flow <= 0.0 {
            continue;
        }
        let ch = &config.chillers[i];
        let mut q = building_load_kw * flow / total_flow;
        let cap = config.plr_max * ch.rated_kw;
        if q > cap {
            q = cap;
        }
        cooling[i] = q;
        plr[i] = part_load_ratio(q, ch.rated_kw)?;
        power[i] = power_from_plr(ch, plr[i])?.max(0.0);
        cop[i] = if q > 0.0 { q / power[i].max(1e-9) } else { 0.0 };
    }

    let delivered: f64 = cooling.iter().sum();
    let total_power: f64 = power.iter().sum();

    Ok(PlantTelemetry {
        t_return_c: t_return,
        cooling_kw: cooling,
        plr,
        power_kw: power,
        cop,
        total_power_kw: total_power,
        unmet_load_kw: building_load_kw - delivered,
        building_load_kw,
    })
}

/// Evaluate every operating constraint against resolved telemetry.
///
/// The loop temperature range applies only while at least one chiller runs;
/// part-load, minimum-flow and COP limits apply to ON chillers only.
pub fn check_constraints(
    config: &PlantConfig,
    telemetry: &PlantTelemetry,
    action: &ChillerAction,
    tol: &ConstraintTolerances,
) -> ConstraintReport {
    let on = action.on_status();
    let any_on = on.iter().any(|&s| s);

    let energy_violation = telemetry.unmet_load_kw.abs();

    let t_violation = if any_on {
        let t = telemetry.t_return_c;
        (t - config.t_return_max_c).max(0.0) + (config.t_return_min_c - t).max(0.0)
    } else {
        0.0
    };

    let mut plr_violation = 0.0f64;
    let mut flow_violation = 0.0f64;
    let mut cop_violation = 0.0f64;
    for i in 0..config.n_chillers() {
        if !on[i] {
            continue;
        }
        let ch = &config.chillers[i];
        let p = telemetry.plr[i];
        plr_violation = plr_violation
            .max(config.plr_min - p)
            .max(p - config.plr_max);
        flow_violation = flow_violation.max(ch.flow_min_kgs - action.flows_kgs[i]);
        cop_violation = cop_violation.max(telemetry.cop[i] - ch.cop_max);
    }
    plr_violation = plr_violation.max(0.0);
    flow_violation = flow_violation.max(0.0);
    cop_violation = cop_violation.max(0.0);

    let entry = |id: ConstraintId, violation: f64, tolerance: f64| ConstraintEntry {
        id,
        satisfied: violation <= tolerance,
        violation: if violation <= tolerance { 0.0 } else { violation },
    };

    ConstraintReport {
        entries: vec![
            entry(ConstraintId::EnergyBalance, energy_violation, tol.energy_kw),
            entry(ConstraintId::TReturnRange, t_violation, tol.temp_c),
            entry(ConstraintId::PlrRange, plr_violation, tol.ratio),
            entry(ConstraintId::MinFlow, flow_violation, tol.flow_kgs),
            entry(ConstraintId::CopCap, cop_violation, tol.ratio),
        ],
    }
}

/// Result of a cubic power-curve fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurveFit {
    pub coeffs: [f64; 4],
    pub r_squared: f64,
}

/// Least-squares cubic fit of (plr, power) samples.
///
/// Needs at least four samples with distinct part-load ratios; for a sound
/// fit the samples should span the operating range (roughly 0.3 to 0.9).
pub fn fit_power_curve(samples: &[(f64, f64)]) -> Result<PowerCurveFit> {
    if samples.len() < 4 {
        return Err(CoreError::Fit(format!(
            "need at least 4 samples for a cubic fit, got {}",
            samples.len()
        )));
    }
    for &(plr, power) in samples {
        if !plr.is_finite() || !power.is_finite() {
            return Err(CoreError::Fit("samples must be finite".into()));
        }
    }

    let n = samples.len();
    let mut x = DMatrix::zeros(n, 4);
    let mut y = DVector::zeros(n);
    for (i, &(plr, power)) in samples.iter().enumerate() {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = plr;
        x[(i, 2)] = plr * plr;
        x[(i, 3)] = plr * plr * plr;
        y[i] = power;
    }

    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > max_sv * 1e-10)
        .count();
    if rank < 4 {
        return Err(CoreError::Fit(
            "rank-deficient design matrix; samples do not span a cubic".into(),
        ));
    }
    let beta = svd
        .solve(&y, max_sv * 1e-12)
        .map_err(|e| CoreError::Fit(e.to_string()))?;

    let residuals = &x * &beta - &y;
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let mean = y.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res < 1e-12 {
        1.0
    } else {
        f64::NEG_INFINITY
    };

    Ok(PowerCurveFit {
        coeffs: [beta[0], beta[1], beta[2], beta[3]],
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn campus() -> PlantConfig {
        PlantConfig::campus()
    }

    #[test]
    fn campus_config_is_valid() {
        campus().validate().unwrap();
    }

    #[test]
    fn power_curve_reference_points() {
        let plant = campus();
        let p0 = power_from_plr(&plant.chillers[0], 0.0).unwrap();
        assert_relative_eq!(p0, 33.3469, max_relative = 1e-12);

        let p1 = power_from_plr(&plant.chillers[0], 1.0).unwrap();
        assert_relative_eq!(p1, 199.4694, epsilon = 1e-9);

        let p4 = power_from_plr(&plant.chillers[3], 0.5).unwrap();
        assert_relative_eq!(p4, 24.3344, epsilon = 1e-9);
    }

    #[test]
    fn power_rejects_negative_plr() {
        let plant = campus();
        assert!(power_from_plr(&plant.chillers[0], -0.1).is_err());
        assert!(power_from_plr(&plant.chillers[0], f64::NAN).is_err());
    }

    #[test]
    fn part_load_ratio_basics() {
        assert_eq!(part_load_ratio(850.0, 1700.0).unwrap(), 0.5);
        assert_eq!(part_load_ratio(0.0, 1700.0).unwrap(), 0.0);
        assert_eq!(part_load_ratio(710.0, 710.0).unwrap(), 1.0);
        assert!(part_load_ratio(100.0, 0.0).is_err());
        assert!(part_load_ratio(100.0, -5.0).is_err());
    }

    #[test]
    fn return_temperature_examples() {
        let plant = campus();
        let t = return_temperature(1000.0, 50.0, &plant).unwrap();
        assert_relative_eq!(t, 10.7778, epsilon = 1e-4);

        let t0 = return_temperature(0.0, 50.0, &plant).unwrap();
        assert_eq!(t0, 6.0);

        let t4 = return_temperature(355.0, 14.5, &plant).unwrap();
        assert_relative_eq!(t4, 11.849, epsilon = 1e-3);

        assert!(matches!(
            return_temperature(500.0, 0.0, &plant),
            Err(CoreError::NoFlowUnderLoad { .. })
        ));
    }

    #[test]
    fn dispatch_two_chiller_example() {
        let plant = campus();
        let action = ChillerAction::from_flows(vec![30.0, 30.0, 0.0, 0.0]);
        let t = steady_state_dispatch(&plant, &action, 1000.0).unwrap();

        assert_relative_eq!(t.t_return_c, 9.9815, epsilon = 1e-4);
        assert_relative_eq!(t.cooling_kw[0], 500.0, epsilon = 1e-9);
        assert_relative_eq!(t.cooling_kw[1], 500.0, epsilon = 1e-9);
        assert_relative_eq!(t.plr[0], 0.2941, epsilon = 1e-4);
        assert_relative_eq!(t.unmet_load_kw, 0.0, epsilon = 1e-9);
        // Chiller 1 at this operating point draws close to 59.09 kW.
        assert_relative_eq!(t.power_kw[0], 59.09, epsilon = 0.01);
        assert_relative_eq!(
            t.total_power_kw,
            t.power_kw.iter().sum::<f64>(),
            max_relative = 0.0
        );
    }

    #[test]
    fn dispatch_idle_plant() {
        let plant = campus();
        let action = ChillerAction::all_off(4);
        let t = steady_state_dispatch(&plant, &action, 0.0).unwrap();
        assert_eq!(t.total_power_kw, 0.0);
        assert_eq!(t.unmet_load_kw, 0.0);
        assert_eq!(t.t_return_c, plant.t_supply_c);
    }

    #[test]
    fn dispatch_chiller4_solo_example() {
        let plant = campus();
        let action = ChillerAction::from_flows(vec![0.0, 0.0, 0.0, 14.5]);
        let t = steady_state_dispatch(&plant, &action, 355.0).unwrap();
        assert_relative_eq!(t.plr[3], 0.5, epsilon = 1e-12);
        assert_relative_eq!(t.power_kw[3], 24.3344, epsilon = 1e-9);
    }

    #[test]
    fn dispatch_all_off_under_load() {
        let plant = campus();
        let t = steady_state_dispatch(&plant, &ChillerAction::all_off(4), 1200.0).unwrap();
        assert_eq!(t.unmet_load_kw, 1200.0);
        assert_eq!(t.t_return_c, plant.t_return_max_c);
        assert_eq!(t.total_power_kw, 0.0);
    }

    #[test]
    fn dispatch_caps_at_plr_max() {
        let mut plant = campus();
        plant.plr_max = 1.0;
        let action = ChillerAction::from_flows(vec![50.8, 0.0, 0.0, 0.0]);
        let t = steady_state_dispatch(&plant, &action, 2500.0).unwrap();
        assert_relative_eq!(t.cooling_kw[0], 1700.0, epsilon = 1e-9);
        assert_relative_eq!(t.unmet_load_kw, 800.0, epsilon = 1e-9);
        assert_relative_eq!(t.plr[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dispatch_rejects_bad_load() {
        let plant = campus();
        let action = ChillerAction::all_off(4);
        assert!(steady_state_dispatch(&plant, &action, -1.0).is_err());
        assert!(steady_state_dispatch(&plant, &action, f64::NAN).is_err());
    }

    #[test]
    fn decode_off_threshold_rule() {
        let plant = campus();
        // Below half-minimum switches off, between half-minimum and minimum
        // clamps up, above maximum clamps down.
        let a = ChillerAction::decode(&[7.0, 7.5, 60.0, 21.2], &plant);
        assert_eq!(a.flows_kgs[0], 0.0);
        assert_eq!(a.flows_kgs[1], 14.5);
        assert_eq!(a.flows_kgs[2], 50.8);
        assert_eq!(a.flows_kgs[3], 21.2);
        assert_eq!(a.on_status(), vec![false, true, true, true]);
    }

    #[test]
    fn constraints_interior_point() {
        let plant = campus();
        let tol = ConstraintTolerances::default();
        let action = ChillerAction::from_flows(vec![30.0, 30.0, 0.0, 0.0]);
        let t = steady_state_dispatch(&plant, &action, 1000.0).unwrap();
        let report = check_constraints(&plant, &t, &action, &tol);
        assert!(report.all_satisfied(), "report: {report:?}");
    }

    #[test]
    fn constraints_t_return_violation_magnitude() {
        let plant = campus();
        let tol = ConstraintTolerances::default();
        let action = ChillerAction::from_flows(vec![20.0, 0.0, 0.0, 0.0]);
        let mut t = steady_state_dispatch(&plant, &action, 600.0).unwrap();
        t.t_return_c = 14.5;
        let report = check_constraints(&plant, &t, &action, &tol);
        let entry = report.get(ConstraintId::TReturnRange);
        assert!(!entry.satisfied);
        assert_relative_eq!(entry.violation, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn constraints_cop_cap_at_full_load() {
        let plant = campus();
        let tol = ConstraintTolerances::default();
        // Chiller 1 at full load: COP = 1700 / 199.4694 = 8.523, under the cap.
        let action = ChillerAction::from_flows(vec![50.8, 0.0, 0.0, 0.0]);
        let t = steady_state_dispatch(&plant, &action, 1700.0).unwrap();
        assert_relative_eq!(t.cop[0], 8.523, epsilon = 1e-3);
        let report = check_constraints(&plant, &t, &action, &tol);
        assert!(report.get(ConstraintId::CopCap).satisfied);
    }

    #[test]
    fn constraints_chiller4_cop_exceeds_cap() {
        // The fitted curve for the 710 kW machine implies a COP far above
        // its trust cap across its normal range, so the cap flags it.
        let plant = campus();
        let tol = ConstraintTolerances::default();
        let action = ChillerAction::from_flows(vec![0.0, 0.0, 0.0, 14.5]);
        let t = steady_state_dispatch(&plant, &action, 355.0).unwrap();
        let report = check_constraints(&plant, &t, &action, &tol);
        let entry = report.get(ConstraintId::CopCap);
        assert!(!entry.satisfied);
        assert_relative_eq!(entry.violation, 355.0 / 24.3344 - 5.814, epsilon = 1e-6);
    }

    fn table_row_samples(row: usize, n: usize) -> Vec<(f64, f64)> {
        let plant = campus();
        (0..n)
            .map(|i| {
                let plr = 0.2 + 0.8 * i as f64 / (n - 1) as f64;
                (plr, plant.chillers[row].cubic(plr))
            })
            .collect()
    }

    #[test]
    fn fit_recovers_noiseless_rows() {
        let plant = campus();
        for row in 0..4 {
            let fit = fit_power_curve(&table_row_samples(row, 20)).unwrap();
            for k in 0..4 {
                assert_relative_eq!(
                    fit.coeffs[k],
                    plant.chillers[row].power_coeffs[k],
                    epsilon = 1e-6
                );
            }
            assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn fit_noisy_r_squared_stays_high() {
        let mut total = 0.0;
        for seed in 0..20u64 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let samples: Vec<(f64, f64)> = table_row_samples(0, 20)
                .into_iter()
                .map(|(plr, p)| {
                    let noise: f64 = rand::Rng::sample(&mut rng, StandardNormal);
                    (plr, p + 10.0 * noise)
                })
                .collect();
            let fit = fit_power_curve(&samples).unwrap();
            total += fit.r_squared;
        }
        let mean = total / 20.0;
        assert!(mean >= 0.90, "mean R^2 = {mean}");
    }

    #[test]
    fn fit_interpolates_four_points() {
        let samples = table_row_samples(2, 4);
        let fit = fit_power_curve(&samples).unwrap();
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn fit_rejects_rank_deficiency() {
        let samples = vec![(0.5, 90.0), (0.5, 91.0), (0.5, 92.0), (0.5, 93.0)];
        assert!(matches!(fit_power_curve(&samples), Err(CoreError::Fit(_))));
        assert!(fit_power_curve(&[(0.3, 50.0), (0.5, 90.0), (0.7, 120.0)]).is_err());
    }

    #[test]
    fn power_curves_increasing_on_operating_range() {
        let plant = campus();
        for ch in &plant.chillers {
            let [_, b, c, d] = ch.power_coeffs;
            let mut plr = 0.30;
            while plr <= 1.0 + 1e-12 {
                let slope = b + 2.0 * c * plr + 3.0 * d * plr * plr;
                assert!(
                    slope > 0.0,
                    "chiller {} slope {slope} at plr {plr}",
                    ch.id
                );
                plr += 1e-3;
            }
        }
    }

    proptest! {
        #[test]
        fn energy_balance_closes_without_capping(
            load in 1.0f64..5000.0,
            f1 in 14.5f64..50.8,
            f2 in 14.5f64..50.8,
            f4 in 14.5f64..21.2,
            on1 in any::<bool>(),
            on2 in any::<bool>(),
        ) {
            let plant = campus();
            let flows = vec![
                if on1 { f1 } else { 0.0 },
                if on2 { f2 } else { 0.0 },
                f1.min(50.8),
                f4,
            ];
            let action = ChillerAction::from_flows(flows);
            let t = steady_state_dispatch(&plant, &action, load).unwrap();
            // plr_max is 10, so no capping can occur at these loads.
            prop_assert!(t.unmet_load_kw.abs() / load <= 1e-9);
            let total: f64 = action.flows_kgs.iter().sum();
            for i in 0..4 {
                if action.flows_kgs[i] > 0.0 {
                    let share = t.cooling_kw[i] / load;
                    let want = action.flows_kgs[i] / total;
                    prop_assert!((share - want).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn return_temperature_decreasing_in_flow(
            load in 1.0f64..5000.0,
            flow in 1.0f64..200.0,
        ) {
            let plant = campus();
            let t1 = return_temperature(load, flow, &plant).unwrap();
            let t2 = return_temperature(load, flow * 1.1, &plant).unwrap();
            prop_assert!(t2 < t1);
            let t0 = return_temperature(0.0, flow, &plant).unwrap();
            prop_assert_eq!(t0, plant.t_supply_c);
        }

        #[test]
        fn constraint_report_permutation_invariant(
            load in 400.0f64..4000.0,
            f1 in 14.5f64..50.8,
            f2 in 14.5f64..50.8,
            f3 in 14.5f64..50.8,
        ) {
            let plant = campus();
            let tol = ConstraintTolerances::default();
            let action = ChillerAction::from_flows(vec![f1, f2, f3, 0.0]);
            let t = steady_state_dispatch(&plant, &action, load).unwrap();
            let report = check_constraints(&plant, &t, &action, &tol);

            // Swap chillers 1 and 2 (identical limits) along with the action.
            let mut plant2 = plant.clone();
            plant2.chillers.swap(0, 1);
            let action2 = ChillerAction::from_flows(vec![f2, f1, f3, 0.0]);
            let t2 = steady_state_dispatch(&plant2, &action2, load).unwrap();
            let report2 = check_constraints(&plant2, &t2, &action2, &tol);

            for id in ConstraintId::ALL {
                let a = report.get(id);
                let b = report2.get(id);
                prop_assert_eq!(a.satisfied, b.satisfied);
                prop_assert!((a.violation - b.violation).abs() <= 1e-9);
            }
        }
    }
}
