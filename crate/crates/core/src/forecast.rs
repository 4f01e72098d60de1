//! Building cooling-load forecasting.
//!
//! Every forecaster maps a fixed-length history window of load plus
//! exogenous weather onto a nonnegative multi-step load trajectory. The
//! receding-horizon controller only depends on that contract, so heavier
//! models can be swapped in without touching the control stack.

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const STEPS_PER_DAY: usize = 48;
pub const DEFAULT_WINDOW: usize = 336;
pub const DEFAULT_HORIZON: usize = 48;

/// Half-hourly building cooling load history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSeries {
    pub start: NaiveDateTime,
    pub step_minutes: u32,
    pub load_kw: Vec<f64>,
}

impl LoadSeries {
    pub fn len(&self) -> usize {
        self.load_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load_kw.is_empty()
    }

    pub fn timestamp(&self, idx: usize) -> NaiveDateTime {
        self.start + chrono::Duration::minutes(self.step_minutes as i64 * idx as i64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_minutes == 0 {
            return Err(CoreError::invalid("step_minutes must be positive"));
        }
        if self.load_kw.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(CoreError::invalid("loads must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Per-step weather channels aligned one-to-one with a [`LoadSeries`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExogSeries {
    pub wind_mps: Vec<f64>,
    pub wind_deg: Vec<f64>,
    pub temp_c: Vec<f64>,
    pub rh_pct: Vec<f64>,
    pub ghi_wm2: Vec<f64>,
}

impl ExogSeries {
    pub fn len(&self) -> usize {
        self.temp_c.len()
    }

    pub fn validate(&self, expected_len: usize) -> Result<()> {
        let lens = [
            self.wind_mps.len(),
            self.wind_deg.len(),
            self.temp_c.len(),
            self.rh_pct.len(),
            self.ghi_wm2.len(),
        ];
        if lens.iter().any(|&l| l != expected_len) {
            return Err(CoreError::invalid(format!(
                "exogenous channels must all have length {expected_len}"
            )));
        }
        if self.rh_pct.iter().any(|&h| !(0.0..=100.0).contains(&h)) {
            return Err(CoreError::invalid("relative humidity must be in [0, 100]"));
        }
        Ok(())
    }

    pub fn channels_at(&self, idx: usize) -> [f64; 5] {
        [
            self.wind_mps[idx],
            self.wind_deg[idx],
            self.temp_c[idx],
            self.rh_pct[idx],
            self.ghi_wm2[idx],
        ]
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> ExogSeries {
        ExogSeries {
            wind_mps: self.wind_mps[range.clone()].to_vec(),
            wind_deg: self.wind_deg[range.clone()].to_vec(),
            temp_c: self.temp_c[range.clone()].to_vec(),
            rh_pct: self.rh_pct[range.clone()].to_vec(),
            ghi_wm2: self.ghi_wm2[range].to_vec(),
        }
    }
}

/// One forecasting request: a trailing history window plus the horizon and
/// the half-hour-of-day index of the first step to predict.
#[derive(Debug, Clone)]
pub struct ForecastRequest<'a> {
    pub load_window: &'a [f64],
    pub exog_window: &'a ExogSeries,
    pub horizon: usize,
    /// Half-hour slot (0..48) of the first forecast step.
    pub first_step_of_day: usize,
}

/// A nonnegative load trajectory produced by a forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub load_kw: Vec<f64>,
    pub model_id: String,
}

pub trait Forecaster: Send + Sync {
    fn forecast(&self, req: &ForecastRequest) -> Result<Forecast>;
    fn id(&self) -> &str;
    /// Minimum history length this model needs.
    fn min_window(&self) -> usize;
}

/// Repeats the last observed load across the horizon.
#[derive(Debug, Clone, Default)]
pub struct PersistenceForecaster;

impl Forecaster for PersistenceForecaster {
    fn forecast(&self, req: &ForecastRequest) -> Result<Forecast> {
        let last = *req
            .load_window
            .last()
            .ok_or_else(|| CoreError::invalid("persistence forecast needs a non-empty window"))?;
        Ok(Forecast {
            load_kw: vec![last.max(0.0); req.horizon],
            model_id: self.id().to_string(),
        })
    }

    fn id(&self) -> &str {
        "persistence"
    }

    fn min_window(&self) -> usize {
        1
    }
}

/// Repeats the value observed one period earlier (yesterday's same slot by
/// default).
#[derive(Debug, Clone)]
pub struct SeasonalNaiveForecaster {
    pub period: usize,
}

impl Default for SeasonalNaiveForecaster {
    fn default() -> Self {
        SeasonalNaiveForecaster {
            period: STEPS_PER_DAY,
        }
    }
}

impl Forecaster for SeasonalNaiveForecaster {
    fn forecast(&self, req: &ForecastRequest) -> Result<Forecast> {
        let n = req.load_window.len();
        if n < self.period {
            return Err(CoreError::invalid(format!(
                "seasonal naive needs at least {} observations, got {n}",
                self.period
            )));
        }
        let preds = (0..req.horizon)
            .map(|h| req.load_window[n - self.period + h % self.period].max(0.0))
            .collect();
        Ok(Forecast {
            load_kw: preds,
            model_id: self.id().to_string(),
        })
    }

    fn id(&self) -> &str {
        "seasonal_naive"
    }

    fn min_window(&self) -> usize {
        self.period
    }
}

/// Feature layout shared by fitting and prediction: a handful of load lags,
/// the last observed weather channels, and a one-hot of the target step's
/// half-hour-of-day. One ridge model per horizon step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagRegressionConfig {
    pub lags: Vec<usize>,
    pub ridge: f64,
    pub window: usize,
    pub horizon: usize,
}

impl Default for LagRegressionConfig {
    fn default() -> Self {
        LagRegressionConfig {
            lags: vec![1, 2, 48, 336],
            ridge: 1.0,
            window: DEFAULT_WINDOW,
            horizon: DEFAULT_HORIZON,
        }
    }
}

impl LagRegressionConfig {
    fn n_features(&self) -> usize {
        // lags + 5 weather channels + hour-of-day one-hot + intercept
        self.lags.len() + 5 + STEPS_PER_DAY + 1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LagRegressionForecaster {
    pub config: LagRegressionConfig,
    /// One weight vector per horizon step.
    pub weights: Vec<Vec<f64>>,
}

impl LagRegressionForecaster {
    /// Zero-weight model with the given layout; predicts zero everywhere.
    pub fn zeros(config: LagRegressionConfig) -> Self {
        let n = config.n_features();
        let weights = vec![vec![0.0; n]; config.horizon];
        LagRegressionForecaster { config, weights }
    }

    fn features(
        &self,
        load_window: &[f64],
        exog_window: &ExogSeries,
        target_step_of_day: usize,
    ) -> Vec<f64> {
        let n = load_window.len();
        let mut f = Vec::with_capacity(self.config.n_features());
        f.push(1.0);
        for &lag in &self.config.lags {
            f.push(load_window[n - lag.min(n)]);
        }
        let w = exog_window.channels_at(exog_window.len() - 1);
        f.extend_from_slice(&w);
        for s in 0..STEPS_PER_DAY {
            f.push(if s == target_step_of_day % STEPS_PER_DAY {
                1.0
            } else {
                0.0
            });
        }
        f
    }
}

impl Forecaster for LagRegressionForecaster {
    fn forecast(&self, req: &ForecastRequest) -> Result<Forecast> {
        if req.load_window.len() < self.config.window {
            return Err(CoreError::contract(format!(
                "lag regression needs a {}-step window, got {}",
                self.config.window,
                req.load_window.len()
            )));
        }
        if req.exog_window.len() != req.load_window.len() {
            return Err(CoreError::contract(
                "exogenous window must align with the load window",
            ));
        }
        if req.horizon > self.config.horizon {
            return Err(CoreError::contract(format!(
                "model fitted for horizon {}, requested {}",
                self.config.horizon, req.horizon
            )));
        }
        let mut preds = Vec::with_capacity(req.horizon);
        for h in 0..req.horizon {
            let feats = self.features(
                req.load_window,
                req.exog_window,
                req.first_step_of_day + h,
            );
            let w = &self.weights[h];
            if w.len() != feats.len() {
                return Err(CoreError::contract(
                    "feature layout mismatch between model and request",
                ));
            }
            let y: f64 = feats.iter().zip(w).map(|(a, b)| a * b).sum();
            preds.push(y.max(0.0));
        }
        Ok(Forecast {
            load_kw: preds,
            model_id: self.id().to_string(),
        })
    }

    fn id(&self) -> &str {
        "lag_regression"
    }

    fn min_window(&self) -> usize {
        self.config.window
    }
}

/// Fit one ridge-regularized least-squares model per horizon step.
pub fn fit_lag_regression(
    load: &LoadSeries,
    exog: &ExogSeries,
    config: LagRegressionConfig,
) -> Result<LagRegressionForecaster> {
    load.validate()?;
    exog.validate(load.len())?;
    let window = config.window;
    let n = load.len();
    if n < window + config.horizon + 1 {
        return Err(CoreError::invalid(format!(
            "need at least {} steps to fit, got {n}",
            window + config.horizon + 1
        )));
    }
    let max_lag = config.lags.iter().copied().max().unwrap_or(1);
    if max_lag > window {
        return Err(CoreError::config(
            "largest lag exceeds the history window",
        ));
    }

    let start_slot = slot_of_day(&load.timestamp(0));
    let model = LagRegressionForecaster::zeros(config.clone());
    let p = config.n_features();

    // Training rows share features across horizons; targets differ.
    let origins: Vec<usize> = (window..(n - config.horizon)).collect();
    let mut x = DMatrix::zeros(origins.len(), p);
    for (r, &t) in origins.iter().enumerate() {
        // Placeholder one-hot slot; patched per horizon below.
        let feats = model.features(&load.load_kw[t - window..t], &exog.slice(t - window..t), 0);
        for (c, v) in feats.iter().enumerate() {
            x[(r, c)] = *v;
        }
    }
    let one_hot_base = 1 + config.lags.len() + 5;

    let mut weights = Vec::with_capacity(config.horizon);
    for h in 0..config.horizon {
        let mut xh = x.clone();
        for (r, &t) in origins.iter().enumerate() {
            let slot = (start_slot + t + h) % STEPS_PER_DAY;
            xh[(r, one_hot_base + slot)] = 1.0;
        }
        let y = DVector::from_iterator(
            origins.len(),
            origins.iter().map(|&t| load.load_kw[t + h]),
        );
        let mut xtx = xh.transpose() * &xh;
        // Regularize everything except the intercept.
        for i in 1..p {
            xtx[(i, i)] += config.ridge;
        }
        let xty = xh.transpose() * y;
        let beta = xtx
            .lu()
            .solve(&xty)
            .ok_or_else(|| CoreError::Fit("ridge normal equations are singular".into()))?;
        weights.push(beta.iter().copied().collect());
    }

    Ok(LagRegressionForecaster { config, weights })
}

fn slot_of_day(ts: &NaiveDateTime) -> usize {
    (ts.hour() as usize * 60 + ts.minute() as usize) / 30
}

/// Mean absolute error normalized by the mean absolute actual value.
pub fn nmae(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() || actual.is_empty() {
        return Err(CoreError::invalid(format!(
            "nmae needs equal non-empty lengths, got {} and {}",
            predicted.len(),
            actual.len()
        )));
    }
    let denom: f64 = actual.iter().map(|a| a.abs()).sum::<f64>() / actual.len() as f64;
    if denom <= f64::EPSILON {
        return Err(CoreError::invalid(
            "nmae undefined: actual series has zero mean magnitude",
        ));
    }
    let mae: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs())
        .sum::<f64>()
        / actual.len() as f64;
    Ok(mae / denom)
}

/// Knobs of the synthetic campus-load generator. Defaults produce a plant
/// that is deliberately over-provisioned relative to the load: nights around
/// 600 kW, weekday peaks below half the bank's rated capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampusLoadParams {
    pub base_kw: f64,
    /// Occupancy-driven load at full weekday occupancy.
    pub occupancy_kw: f64,
    pub weekend_occupancy: f64,
    /// All-days diurnal swing independent of occupancy.
    pub diurnal_kw: f64,
    /// Cooling load added per degree of ambient above the balance point.
    pub temp_coupling_kw_per_c: f64,
    pub temp_balance_c: f64,
    pub temp_mean_c: f64,
    pub temp_diurnal_amp_c: f64,
    pub temp_noise_c: f64,
    /// Solar gain per W/m^2 of irradiance.
    pub solar_coupling: f64,
    pub ghi_peak_wm2: f64,
    /// Stationary standard deviation of the autocorrelated load noise.
    pub load_noise_kw: f64,
    pub noise_rho: f64,
    /// Fractional irradiance dimming from cloud cover, 0 disables it.
    pub cloud_noise: f64,
    /// Occupied half-hour slots (start inclusive, end exclusive).
    pub occupied_start_slot: usize,
    pub occupied_end_slot: usize,
    pub max_load_kw: f64,
}

impl Default for CampusLoadParams {
    fn default() -> Self {
        CampusLoadParams {
            base_kw: 640.0,
            occupancy_kw: 1050.0,
            weekend_occupancy: 0.30,
            diurnal_kw: 140.0,
            temp_coupling_kw_per_c: 52.0,
            temp_balance_c: 20.0,
            temp_mean_c: 24.0,
            temp_diurnal_amp_c: 6.0,
            temp_noise_c: 1.4,
            solar_coupling: 0.12,
            ghi_peak_wm2: 880.0,
            load_noise_kw: 55.0,
            noise_rho: 0.88,
            cloud_noise: 0.25,
            occupied_start_slot: 14,
            occupied_end_slot: 38,
            max_load_kw: 5810.0,
        }
    }
}

/// Deterministic-per-seed synthetic campus load and weather trace.
///
/// The load combines a diurnal shape, a smoothed working-hours occupancy
/// block, weather-coupled components driven by the generated temperature
/// and irradiance channels, and autocorrelated noise, clamped to the
/// plant's capacity envelope.
pub fn synthetic_campus_load(
    days: usize,
    seed: u64,
    params: &CampusLoadParams,
) -> Result<(LoadSeries, ExogSeries)> {
    if days == 0 {
        return Err(CoreError::invalid("need at least one day"));
    }
    let n = days * STEPS_PER_DAY;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // Start on a Monday so weekday structure is aligned and predictable.
    let start = NaiveDate::from_ymd_opt(2025, 1, 6)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();

    let mut wind = Vec::with_capacity(n);
    let mut wind_dir = Vec::with_capacity(n);
    let mut temp = Vec::with_capacity(n);
    let mut rh = Vec::with_capacity(n);
    let mut ghi = Vec::with_capacity(n);
    let mut load = Vec::with_capacity(n);

    let mut temp_noise = 0.0f64;
    let mut load_noise = 0.0f64;
    let mut wind_state = 5.0f64;
    let mut dir_state = 120.0f64;
    let mut rh_state = 60.0f64;
    let rho = params.noise_rho.clamp(0.0, 0.999);
    let innovation = (1.0 - rho * rho).sqrt();

    for t in 0..n {
        let slot = t % STEPS_PER_DAY;
        let date = start + chrono::Duration::minutes(30 * t as i64);
        let weekday = date.weekday().num_days_from_monday() < 5;
        let hour = slot as f64 / 2.0;

        // Ambient temperature: diurnal sinusoid peaking mid-afternoon plus
        // slow noise.
        temp_noise = rho * temp_noise
            + innovation * params.temp_noise_c * rng.sample::<f64, _>(StandardNormal);
        let t_amb = params.temp_mean_c
            + params.temp_diurnal_amp_c * ((hour - 15.0) * std::f64::consts::PI / 12.0).cos()
            + temp_noise;

        // Clear-sky style irradiance with mild cloud noise.
        let sun = ((hour - 12.5) * std::f64::consts::PI / 13.0).cos().max(0.0);
        let cloud = (1.0 - params.cloud_noise * rng.gen::<f64>()).clamp(0.0, 1.0);
        let irr = params.ghi_peak_wm2 * sun * sun * cloud;

        wind_state = (wind_state + 0.6 * rng.sample::<f64, _>(StandardNormal)).clamp(0.5, 18.0);
        dir_state = (dir_state + 12.0 * rng.sample::<f64, _>(StandardNormal)).rem_euclid(360.0);
        rh_state = (rh_state + 1.5 * rng.sample::<f64, _>(StandardNormal)).clamp(20.0, 95.0);

        // Occupancy fraction with one-hour ramps at the block edges.
        let occ_shape = occupancy_fraction(slot, params.occupied_start_slot, params.occupied_end_slot);
        let occ = occ_shape * if weekday { 1.0 } else { params.weekend_occupancy };

        let diurnal = params.diurnal_kw * ((hour - 14.0) * std::f64::consts::PI / 12.0).cos().max(0.0);
        let temp_load = params.temp_coupling_kw_per_c
            * (t_amb - params.temp_balance_c).max(0.0)
            * (0.35 + 0.65 * occ);
        let solar_load = params.solar_coupling * irr * (0.5 + 0.5 * occ);

        load_noise = rho * load_noise
            + innovation * params.load_noise_kw * rng.sample::<f64, _>(StandardNormal);

        let q = params.base_kw
            + params.occupancy_kw * occ
            + diurnal
            + temp_load
            + solar_load
            + load_noise;

        wind.push(wind_state);
        wind_dir.push(dir_state);
        temp.push(t_amb);
        rh.push(rh_state);
        ghi.push(irr);
        load.push(q.clamp(0.0, params.max_load_kw));
    }

    let series = LoadSeries {
        start,
        step_minutes: 30,
        load_kw: load,
    };
    let exog = ExogSeries {
        wind_mps: wind,
        wind_deg: wind_dir,
        temp_c: temp,
        rh_pct: rh,
        ghi_wm2: ghi,
    };
    series.validate()?;
    exog.validate(series.len())?;
    Ok((series, exog))
}

fn occupancy_fraction(slot: usize, start: usize, end: usize) -> f64 {
    let ramp = 2.0; // one hour of half-hour slots
    let s = slot as f64;
    let (start, end) = (start as f64, end as f64);
    if s < start - ramp || s >= end + ramp {
        0.0
    } else if s < start {
        (s - (start - ramp)) / ramp
    } else if s < end {
        1.0
    } else {
        1.0 - (s - end) / ramp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn flat_exog(n: usize) -> ExogSeries {
        ExogSeries {
            wind_mps: vec![4.0; n],
            wind_deg: vec![90.0; n],
            temp_c: vec![25.0; n],
            rh_pct: vec![55.0; n],
            ghi_wm2: vec![300.0; n],
        }
    }

    fn request<'a>(
        load: &'a [f64],
        exog: &'a ExogSeries,
        horizon: usize,
    ) -> ForecastRequest<'a> {
        ForecastRequest {
            load_window: load,
            exog_window: exog,
            horizon,
            first_step_of_day: (load.len()) % STEPS_PER_DAY,
        }
    }

    #[test]
    fn persistence_repeats_last_value() {
        let exog = flat_exog(10);
        let window = vec![400.0; 10];
        let f = PersistenceForecaster
            .forecast(&request(&window, &exog, 48))
            .unwrap();
        assert_eq!(f.load_kw, vec![400.0; 48]);

        let mut window2 = vec![500.0; 9];
        window2.push(812.5);
        let f2 = PersistenceForecaster
            .forecast(&request(&window2, &exog, 48))
            .unwrap();
        assert!(f2.load_kw.iter().all(|&v| v == 812.5));

        let truth = vec![812.5; 48];
        assert_eq!(nmae(&f2.load_kw, &truth).unwrap(), 0.0);

        let empty: Vec<f64> = vec![];
        assert!(PersistenceForecaster
            .forecast(&request(&empty, &flat_exog(0), 48))
            .is_err());
    }

    #[test]
    fn seasonal_naive_nails_periodic_series() {
        let exog = flat_exog(96);
        let window: Vec<f64> = (0..96)
            .map(|t| 800.0 + 300.0 * (2.0 * std::f64::consts::PI * (t % 48) as f64 / 48.0).sin())
            .collect();
        let f = SeasonalNaiveForecaster::default()
            .forecast(&request(&window, &exog, 48))
            .unwrap();
        let truth: Vec<f64> = (96..144)
            .map(|t| 800.0 + 300.0 * (2.0 * std::f64::consts::PI * (t % 48) as f64 / 48.0).sin())
            .collect();
        assert!(nmae(&f.load_kw, &truth).unwrap() <= 1e-12);
    }

    #[test]
    fn seasonal_naive_constant_and_short_window() {
        let exog = flat_exog(50);
        let window = vec![650.0; 50];
        let f = SeasonalNaiveForecaster::default()
            .forecast(&request(&window, &exog, 48))
            .unwrap();
        assert!(f.load_kw.iter().all(|&v| v == 650.0));

        let short = vec![650.0; 20];
        assert!(SeasonalNaiveForecaster::default()
            .forecast(&request(&short, &flat_exog(20), 48))
            .is_err());
    }

    #[test]
    fn seasonal_naive_trend_error_is_period_times_slope() {
        // Sinusoid with period 48 plus a 1 kW/step trend: the seasonal
        // repeat lags by exactly one period, so every step errs by 48 kW.
        let n = 144;
        let series: Vec<f64> = (0..n + 48)
            .map(|t| {
                2000.0
                    + 300.0 * (2.0 * std::f64::consts::PI * t as f64 / 48.0).sin()
                    + 1.0 * t as f64
            })
            .collect();
        let window = &series[..n];
        let exog = flat_exog(n);
        let f = SeasonalNaiveForecaster::default()
            .forecast(&request(window, &exog, 48))
            .unwrap();
        for h in 0..48 {
            let err = series[n + h] - f.load_kw[h];
            assert_relative_eq!(err, 48.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_weight_regression_predicts_zero() {
        let cfg = LagRegressionConfig::default();
        let model = LagRegressionForecaster::zeros(cfg.clone());
        let window = vec![900.0; cfg.window];
        let exog = flat_exog(cfg.window);
        let f = model.forecast(&request(&window, &exog, 48)).unwrap();
        assert!(f.load_kw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn regression_rejects_layout_mismatch() {
        let cfg = LagRegressionConfig::default();
        let mut model = LagRegressionForecaster::zeros(cfg.clone());
        model.weights[0].pop();
        let window = vec![900.0; cfg.window];
        let exog = flat_exog(cfg.window);
        assert!(matches!(
            model.forecast(&request(&window, &exog, 48)),
            Err(CoreError::Contract(_))
        ));
    }

    /// Deterministic hour-of-day driven generator whose target is exactly
    /// representable by the one-hot features, plus white noise.
    fn in_class_series(days: usize, seed: u64) -> (LoadSeries, ExogSeries) {
        let n = days * STEPS_PER_DAY;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let start = NaiveDate::from_ymd_opt(2025, 1, 6)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let mut load = Vec::with_capacity(n);
        let mut temp = Vec::with_capacity(n);
        let mut ghi = Vec::with_capacity(n);
        for t in 0..n {
            let hod = (t % STEPS_PER_DAY) as f64 / 2.0;
            let t_amb = 20.0 + 8.0 * ((hod - 15.0) * std::f64::consts::PI / 12.0).cos();
            let irr = 600.0 * ((hod - 12.0) * std::f64::consts::PI / 12.0).cos().max(0.0);
            let noise: f64 = rng.sample(StandardNormal);
            load.push((5.0 * t_amb + 0.1 * irr + noise).max(0.0));
            temp.push(t_amb);
            ghi.push(irr);
        }
        (
            LoadSeries {
                start,
                step_minutes: 30,
                load_kw: load,
            },
            ExogSeries {
                wind_mps: vec![5.0; n],
                wind_deg: vec![180.0; n],
                temp_c: temp,
                rh_pct: vec![50.0; n],
                ghi_wm2: ghi,
            },
        )
    }

    fn heldout_nmae(
        model: &dyn Forecaster,
        load: &LoadSeries,
        exog: &ExogSeries,
        window: usize,
        from: usize,
    ) -> f64 {
        let mut preds = Vec::new();
        let mut truth = Vec::new();
        let mut t = from;
        while t + 48 <= load.len() {
            let req = ForecastRequest {
                load_window: &load.load_kw[t - window..t],
                exog_window: &exog.slice(t - window..t),
                horizon: 48,
                first_step_of_day: t % STEPS_PER_DAY,
            };
            let f = model.forecast(&req).unwrap();
            preds.extend(f.load_kw);
            truth.extend_from_slice(&load.load_kw[t..t + 48]);
            t += 48;
        }
        nmae(&preds, &truth).unwrap()
    }

    #[test]
    fn regression_learns_in_class_generator() {
        let (load, exog) = in_class_series(30, 11);
        let split = 22 * STEPS_PER_DAY;
        let train = LoadSeries {
            start: load.start,
            step_minutes: 30,
            load_kw: load.load_kw[..split].to_vec(),
        };
        let train_exog = exog.slice(0..split);
        let model =
            fit_lag_regression(&train, &train_exog, LagRegressionConfig::default()).unwrap();
        let err = heldout_nmae(&model, &load, &exog, DEFAULT_WINDOW, split);
        assert!(err <= 0.05, "held-out NMAE {err}");
    }

    #[test]
    fn regression_beats_persistence_on_campus_generator() {
        let (load, exog) = synthetic_campus_load(36, 42, &CampusLoadParams::default()).unwrap();
        let split = 28 * STEPS_PER_DAY;
        let train = LoadSeries {
            start: load.start,
            step_minutes: 30,
            load_kw: load.load_kw[..split].to_vec(),
        };
        let train_exog = exog.slice(0..split);
        let model =
            fit_lag_regression(&train, &train_exog, LagRegressionConfig::default()).unwrap();
        let err_reg = heldout_nmae(&model, &load, &exog, DEFAULT_WINDOW, split);
        let err_per = heldout_nmae(&PersistenceForecaster, &load, &exog, DEFAULT_WINDOW, split);
        assert!(
            err_reg < err_per,
            "lag regression {err_reg} should beat persistence {err_per}"
        );
    }

    #[test]
    fn nmae_arithmetic() {
        assert_relative_eq!(
            nmae(&[1.0, 1.0], &[1.0, 3.0]).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_eq!(nmae(&[2.0, 4.0], &[2.0, 4.0]).unwrap(), 0.0);
        assert!(nmae(&[1.0], &[0.0]).is_err());
        assert!(nmae(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn generator_deterministic_and_sized() {
        let p = CampusLoadParams::default();
        let (a, _) = synthetic_campus_load(60, 9, &p).unwrap();
        let (b, _) = synthetic_campus_load(60, 9, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2880);
        assert!(a.load_kw.iter().all(|&l| (0.0..=5810.0).contains(&l)));
    }

    #[test]
    fn generator_noiseless_is_weekly_periodic() {
        let p = CampusLoadParams {
            load_noise_kw: 0.0,
            temp_noise_c: 0.0,
            cloud_noise: 0.0,
            ..CampusLoadParams::default()
        };
        let (series, _) = synthetic_campus_load(21, 3, &p).unwrap();
        let week = 7 * STEPS_PER_DAY;
        for t in 0..series.len() - week {
            let a = series.load_kw[t];
            let b = series.load_kw[t + week];
            assert!(
                (a - b).abs() <= 1e-9,
                "weekly mismatch at {t}: {a} vs {b}"
            );
        }
    }
}
