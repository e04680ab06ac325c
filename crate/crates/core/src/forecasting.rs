// Copyright 2026 The dspscale Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Workload forecasting: the forecaster contract, a built-in seasonal Holt
//! forecaster, WAPE scoring, the linear fallback and the retrain policy.

use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Forecast horizon in seconds (one value per second).
pub const HORIZON: usize = 900;
/// A forecast whose WAPE exceeds this is poor.
pub const POOR_FORECAST_THRESHOLD: f64 = 0.25;
/// Consecutive poor forecasts that trigger a retrain.
pub const RETRAIN_AFTER_POOR: u32 = 15;
/// History handed to a retrain.
pub const RETRAIN_WINDOW: usize = 7200;
/// Minimum history for fitting a forecaster.
pub const MIN_FIT_HISTORY: usize = 120;
/// Default window of the fallback regression.
pub const FALLBACK_WINDOW: usize = 300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("forecaster has not been fitted")]
    Unfit,
    #[error("need at least {needed} s of history, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("series lengths differ ({actual} actual vs {forecast} forecast)")]
    LengthMismatch { actual: usize, forecast: usize },
    #[error("score undefined: actual workload sums to zero")]
    UndefinedScore,
    #[error("retraining worker disconnected")]
    RetrainLost,
}

/// Workload rates at 1 s granularity; sample `i` belongs to `start + i`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSeries {
    pub start: u64,
    pub rates: Vec<f64>,
}

impl WorkloadSeries {
    pub fn new(start: u64, rates: Vec<f64>) -> Self {
        debug_assert!(rates.iter().all(|r| *r >= 0.0));
        WorkloadSeries { start, rates }
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Timestamp one past the last sample.
    pub fn end(&self) -> u64 {
        self.start + self.rates.len() as u64
    }

    pub fn push(&mut self, rate: f64) {
        self.rates.push(rate.max(0.0));
    }

    /// Appends `other`, which must start where this series ends. An empty
    /// series adopts `other`'s start.
    pub fn extend(&mut self, other: &WorkloadSeries) {
        if self.rates.is_empty() {
            self.start = other.start;
        }
        debug_assert_eq!(self.end(), other.start, "series must be contiguous");
        self.rates.extend(other.rates.iter().map(|r| r.max(0.0)));
    }

    /// The trailing `n` seconds (or everything, if shorter).
    pub fn tail(&self, n: usize) -> WorkloadSeries {
        let skip = self.rates.len().saturating_sub(n);
        WorkloadSeries {
            start: self.start + skip as u64,
            rates: self.rates[skip..].to_vec(),
        }
    }

    /// Drops everything older than the trailing `n` seconds.
    pub fn truncate_front(&mut self, n: usize) {
        let skip = self.rates.len().saturating_sub(n);
        if skip > 0 {
            self.rates.drain(..skip);
            self.start += skip as u64;
        }
    }

    pub fn mean(&self) -> Option<f64> {
        if self.rates.is_empty() {
            None
        } else {
            Some(self.rates.iter().sum::<f64>() / self.rates.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastSource {
    Primary,
    Fallback,
}

impl ForecastSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            ForecastSource::Primary => "primary",
            ForecastSource::Fallback => "fallback",
        }
    }
}

/// Predicted workload for the `HORIZON` seconds starting at `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub start: u64,
    pub values: Vec<f64>,
    pub source: ForecastSource,
}

impl Forecast {
    pub fn new(start: u64, values: Vec<f64>, source: ForecastSource) -> Self {
        let values = values.into_iter().map(|v| v.max(0.0)).collect();
        Forecast { start, values, source }
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    /// Maximum over the first `seconds` values (at least one value is taken).
    pub fn max_over(&self, seconds: usize) -> f64 {
        let n = seconds.clamp(1, self.values.len().max(1));
        self.values.iter().take(n).cloned().fold(0.0, f64::max)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// A workload forecaster. `fit` trains on a history, `update` feeds new
/// observations without retraining, `forecast` predicts the next
/// [`HORIZON`] seconds after the last known observation.
pub trait Forecaster: Send {
    fn fit(&mut self, history: &WorkloadSeries) -> Result<(), ForecastError>;
    fn update(&mut self, latest: &WorkloadSeries) -> Result<(), ForecastError>;
    fn forecast(&self) -> Result<Forecast, ForecastError>;
    /// A fresh, unfitted forecaster with the same configuration.
    fn unfitted(&self) -> Box<dyn Forecaster>;
    fn is_fitted(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoltConfig {
    pub horizon: usize,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Lead time (s) whose error drives parameter selection.
    pub selection_lead: usize,
    pub min_period: usize,
    pub max_period: usize,
    /// Minimum autocorrelation at the seasonal peak.
    pub min_peak_correlation: f64,
}

impl Default for HoltConfig {
    fn default() -> Self {
        HoltConfig {
            horizon: HORIZON,
            alphas: vec![0.05, 0.1, 0.2, 0.4, 0.7, 1.0],
            betas: vec![0.0, 0.01, 0.05, 0.1, 0.3, 1.0],
            selection_lead: 60,
            min_period: 10,
            max_period: 3600,
            min_peak_correlation: 0.5,
        }
    }
}

/// Holt's double exponential smoothing on the deseasonalized series, plus an
/// additive seasonal profile when the autocorrelation shows a clear period.
#[derive(Debug, Clone)]
pub struct HoltSeasonal {
    config: HoltConfig,
    state: Option<HoltState>,
}

#[derive(Debug, Clone, PartialEq)]
struct HoltState {
    alpha: f64,
    beta: f64,
    level: f64,
    trend: f64,
    season: Vec<f64>,
    /// Seasonal index of the next observation.
    phase: usize,
    next_ts: u64,
}

impl HoltState {
    fn seasonal(&self, offset: usize) -> f64 {
        if self.season.is_empty() {
            0.0
        } else {
            self.season[(self.phase + offset) % self.season.len()]
        }
    }

    fn observe(&mut self, y: f64) {
        let z = y - self.seasonal(0);
        let prev_level = self.level;
        self.level = self.alpha * z + (1.0 - self.alpha) * (self.level + self.trend);
        self.trend = self.beta * (self.level - prev_level) + (1.0 - self.beta) * self.trend;
        self.advance(1);
    }

    fn advance(&mut self, steps: usize) {
        if !self.season.is_empty() {
            self.phase = (self.phase + steps) % self.season.len();
        }
        self.next_ts += steps as u64;
    }
}

impl Default for HoltSeasonal {
    fn default() -> Self {
        Self::new(HoltConfig::default())
    }
}

impl HoltSeasonal {
    pub fn new(config: HoltConfig) -> Self {
        HoltSeasonal { config, state: None }
    }

    /// Detected seasonal period, if any.
    pub fn period(&self) -> Option<usize> {
        self.state
            .as_ref()
            .and_then(|s| (!s.season.is_empty()).then_some(s.season.len()))
    }

    pub fn smoothing(&self) -> Option<(f64, f64)> {
        self.state.as_ref().map(|s| (s.alpha, s.beta))
    }
}

/// Least-squares line `(intercept, slope)` over `ys` indexed `0..n`.
pub(crate) fn fit_line(ys: &[f64]) -> (f64, f64) {
    let n = ys.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    if n == 1 {
        return (ys[0], 0.0);
    }
    let nf = n as f64;
    let mean_t = (nf - 1.0) / 2.0;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let mut sty = 0.0;
    let mut stt = 0.0;
    for (t, y) in ys.iter().enumerate() {
        let dt = t as f64 - mean_t;
        sty += dt * (y - mean_y);
        stt += dt * dt;
    }
    let slope = sty / stt;
    (mean_y - slope * mean_t, slope)
}

/// Picks a seasonal period from the autocorrelation of the detrended series.
/// A period qualifies only if the correlation dips well below the peak
/// before it and the history holds at least two full periods.
fn detect_period(ys: &[f64], config: &HoltConfig) -> Option<usize> {
    let n = ys.len();
    let max_lag = config.max_period.min(n / 2);
    if max_lag <= config.min_period + 1 {
        return None;
    }
    let (a, b) = fit_line(ys);
    let d: Vec<f64> = ys.iter().enumerate().map(|(t, y)| y - (a + b * t as f64)).collect();
    let energy: f64 = d.iter().map(|v| v * v).sum();
    if energy <= 1e-9 * n as f64 {
        return None;
    }
    let mut acf = vec![0.0; max_lag + 2];
    for (k, slot) in acf.iter_mut().enumerate().take(max_lag + 2).skip(1) {
        if k >= n {
            break;
        }
        // Each overlapping segment is centered on its own mean, so a leftover
        // linear trend does not drag the peak towards shorter lags.
        let m = (n - k) as f64;
        let mx = d[..n - k].iter().sum::<f64>() / m;
        let my = d[k..].iter().sum::<f64>() / m;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for t in 0..n - k {
            let (x, y) = (d[t] - mx, d[t + k] - my);
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        *slot = if sxx > 0.0 && syy > 0.0 {
            sxy / (sxx * syy).sqrt()
        } else {
            0.0
        };
    }
    let mut candidates = Vec::new();
    let mut trough = f64::INFINITY;
    for k in 1..=max_lag {
        trough = trough.min(acf[k]);
        if k < config.min_period {
            continue;
        }
        let r = acf[k];
        if r >= acf[k - 1] && r >= acf[k + 1] && r >= config.min_peak_correlation && trough < 0.2 && r - trough >= 0.5 {
            candidates.push((k, r));
        }
    }
    let best = candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    candidates
        .into_iter()
        .find(|c| c.1 >= 0.9 * best)
        .map(|c| c.0)
        .filter(|&p| 2 * p <= n)
}

/// Mean detrended value per phase, centered to zero. Line and profile are
/// fitted alternately: over a few periods a seasonal swing biases a plain
/// line fit, and the biased line leaks into the profile.
fn seasonal_profile(ys: &[f64], period: usize) -> Vec<f64> {
    let mut profile = vec![0.0; period];
    for _ in 0..4 {
        let deseasonalized: Vec<f64> = ys.iter().enumerate().map(|(t, y)| y - profile[t % period]).collect();
        let (a, b) = fit_line(&deseasonalized);
        let mut sums = vec![0.0; period];
        let mut counts = vec![0usize; period];
        for (t, y) in ys.iter().enumerate() {
            sums[t % period] += y - (a + b * t as f64);
            counts[t % period] += 1;
        }
        profile = sums.iter().zip(&counts).map(|(s, c)| s / (*c).max(1) as f64).collect();
        let mean = profile.iter().sum::<f64>() / period as f64;
        profile.iter_mut().for_each(|v| *v -= mean);
    }
    profile
}

/// Runs Holt over `zs`, returning the final (level, trend) and the mean
/// absolute error of 1..=lead step forecasts taken every `lead` steps.
fn holt_pass(zs: &[f64], alpha: f64, beta: f64, lead: usize) -> (f64, f64, f64) {
    let n = zs.len();
    let k = 10.min(n - 1).max(1);
    let mut level = zs[0];
    let mut trend = if n > 1 {
        (zs[k.min(n - 1)] - zs[0]) / k as f64
    } else {
        0.0
    };
    let warmup = (n / 10).max(k);
    let mut err = 0.0;
    let mut count = 0usize;
    for t in 1..n {
        let prev = level;
        level = alpha * zs[t] + (1.0 - alpha) * (level + trend);
        trend = beta * (level - prev) + (1.0 - beta) * trend;
        if t >= warmup && (t - warmup) % lead == 0 && t + lead < n {
            for h in 1..=lead {
                err += (zs[t + h] - (level + h as f64 * trend)).abs();
            }
            count += lead;
        }
    }
    let score = if count == 0 { 0.0 } else { err / count as f64 };
    (level, trend, score)
}

impl Forecaster for HoltSeasonal {
    fn fit(&mut self, history: &WorkloadSeries) -> Result<(), ForecastError> {
        if history.len() < MIN_FIT_HISTORY {
            return Err(ForecastError::InsufficientHistory {
                needed: MIN_FIT_HISTORY,
                got: history.len(),
            });
        }
        let ys = &history.rates;
        let season = detect_period(ys, &self.config)
            .map(|p| seasonal_profile(ys, p))
            .unwrap_or_default();
        let zs: Vec<f64> = ys
            .iter()
            .enumerate()
            .map(|(t, y)| {
                if season.is_empty() {
                    *y
                } else {
                    y - season[t % season.len()]
                }
            })
            .collect();

        let mut best: Option<(f64, f64, f64, f64, f64)> = None;
        for &alpha in &self.config.alphas {
            for &beta in &self.config.betas {
                let (level, trend, score) = holt_pass(&zs, alpha, beta, self.config.selection_lead.max(1));
                if best.is_none_or(|b| score < b.4) {
                    best = Some((alpha, beta, level, trend, score));
                }
            }
        }
        let (alpha, beta, level, trend, _) = best.expect("parameter grid must not be empty");
        let phase = if season.is_empty() { 0 } else { ys.len() % season.len() };
        self.state = Some(HoltState {
            alpha,
            beta,
            level,
            trend,
            season,
            phase,
            next_ts: history.end(),
        });
        Ok(())
    }

    fn update(&mut self, latest: &WorkloadSeries) -> Result<(), ForecastError> {
        let state = self.state.as_mut().ok_or(ForecastError::Unfit)?;
        if latest.start > state.next_ts {
            let gap = (latest.start - state.next_ts) as usize;
            state.level += state.trend * gap as f64;
            state.advance(gap);
        }
        for (i, &y) in latest.rates.iter().enumerate() {
            if latest.start + i as u64 >= state.next_ts {
                state.observe(y);
            }
        }
        Ok(())
    }

    fn forecast(&self) -> Result<Forecast, ForecastError> {
        let state = self.state.as_ref().ok_or(ForecastError::Unfit)?;
        let values = (1..=self.config.horizon)
            .map(|h| state.level + h as f64 * state.trend + state.seasonal(h - 1))
            .collect();
        Ok(Forecast::new(state.next_ts, values, ForecastSource::Primary))
    }

    fn unfitted(&self) -> Box<dyn Forecaster> {
        Box::new(HoltSeasonal::new(self.config.clone()))
    }

    fn is_fitted(&self) -> bool {
        self.state.is_some()
    }
}

/// Weighted absolute percentage error: `Σ|actual − forecast| / Σ actual`.
pub fn wape(actual: &[f64], forecast: &[f64]) -> Result<f64, ForecastError> {
    if actual.len() != forecast.len() || actual.is_empty() {
        return Err(ForecastError::LengthMismatch {
            actual: actual.len(),
            forecast: forecast.len(),
        });
    }
    let total: f64 = actual.iter().sum();
    if total <= 0.0 {
        return Err(ForecastError::UndefinedScore);
    }
    let err: f64 = actual.iter().zip(forecast).map(|(a, f)| (a - f).abs()).sum();
    Ok(err / total)
}

/// Least-squares line over `recent`, projected [`HORIZON`] seconds past its
/// end and clamped at zero.
pub fn fallback_forecast(recent: &WorkloadSeries) -> Forecast {
    let (a, b) = fit_line(&recent.rates);
    let last = recent.len().saturating_sub(1) as f64;
    let values = (1..=HORIZON).map(|k| a + b * (last + k as f64)).collect();
    Forecast::new(recent.end(), values, ForecastSource::Fallback)
}

/// Keeps the primary forecast unless the previous one scored poorly.
pub fn select_forecast(primary: Forecast, previous_wape: f64, recent: &WorkloadSeries, threshold: f64) -> Forecast {
    if previous_wape <= threshold {
        primary
    } else {
        fallback_forecast(recent)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecasterHealth {
    pub consecutive_poor: u32,
    pub last_wape: Option<f64>,
    pub retraining: bool,
}

impl ForecasterHealth {
    /// Records one score; returns `true` when a retrain should start. An
    /// undefined score (NaN or infinite) counts as poor.
    pub fn record_quality(&mut self, wape: f64, threshold: f64) -> bool {
        self.last_wape = Some(wape);
        if wape <= threshold {
            self.consecutive_poor = 0;
            return false;
        }
        self.consecutive_poor += 1;
        if self.consecutive_poor >= RETRAIN_AFTER_POOR && !self.retraining {
            self.retraining = true;
            return true;
        }
        false
    }

    pub fn retrain_finished(&mut self) {
        self.retraining = false;
        self.consecutive_poor = 0;
    }
}

/// A retrain running on its own thread. The fitted model is handed back
/// through a one-shot channel.
pub struct RetrainHandle {
    rx: mpsc::Receiver<Result<Box<dyn Forecaster>, ForecastError>>,
}

impl RetrainHandle {
    /// Starts training `model` on an owned snapshot of history.
    pub fn spawn(mut model: Box<dyn Forecaster>, snapshot: WorkloadSeries) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let result = model.fit(&snapshot).map(|_| model);
            let _ = tx.send(result);
        });
        RetrainHandle { rx }
    }

    /// Non-blocking poll.
    pub fn try_take(&self) -> Option<Result<Box<dyn Forecaster>, ForecastError>> {
        match self.rx.try_recv() {
            Ok(r) => Some(r),
            Err(mpsc::TryRecvError::Empty) => None,
            Err(mpsc::TryRecvError::Disconnected) => Some(Err(ForecastError::RetrainLost)),
        }
    }

    pub fn wait(self) -> Result<Box<dyn Forecaster>, ForecastError> {
        self.rx.recv().unwrap_or(Err(ForecastError::RetrainLost))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn series(f: impl Fn(f64) -> f64, n: usize) -> WorkloadSeries {
        WorkloadSeries::new(0, (0..n).map(|t| f(t as f64)).collect())
    }

    fn fitted(history: &WorkloadSeries) -> HoltSeasonal {
        let mut m = HoltSeasonal::default();
        m.fit(history).unwrap();
        m
    }

    #[test]
    fn constant_history_stays_flat() {
        let m = fitted(&series(|_| 1_000.0, 600));
        let f = m.forecast().unwrap();
        assert_eq!(f.values.len(), HORIZON);
        assert_eq!(f.start, 600);
        assert!(f.values.iter().all(|v| (v - 1_000.0).abs() <= 10.0));
    }

    #[test]
    fn ramp_continues() {
        let m = fitted(&series(|t| 500.0 + 10.0 * t, 600));
        let f = m.forecast().unwrap();
        for (h, v) in f.values.iter().enumerate() {
            let truth = 500.0 + 10.0 * (600 + h) as f64;
            assert!((v - truth).abs() / truth < 0.05, "h={h} {v} vs {truth}");
        }
    }

    #[test]
    fn sine_is_phase_aligned() {
        let period = 400.0;
        let wave = |t: f64| 10_000.0 + 6_000.0 * (2.0 * PI * t / period).sin();
        let m = fitted(&series(wave, 1_000));
        assert_eq!(m.period(), Some(400));
        let f = m.forecast().unwrap();
        let truth: Vec<f64> = (0..HORIZON).map(|h| wave((1_000 + h) as f64)).collect();
        assert!(wape(&truth, &f.values).unwrap() < 0.25);
    }

    #[test]
    fn exactly_two_periods_give_the_exact_period() {
        // A line fitted over a whole number of sine periods still has a
        // slope; neither the period nor the forecast may pick it up.
        let wave = |t: f64| 10_000.0 + 3_000.0 * (2.0 * PI * t / 600.0).sin();
        for n in [1_200, 1_800] {
            let m = fitted(&series(wave, n));
            assert_eq!(m.period(), Some(600), "n={n}");
            let f = m.forecast().unwrap();
            for (h, v) in f.values.iter().enumerate() {
                assert!((v - wave((n + h) as f64)).abs() < 100.0, "n={n} h={h}");
            }
        }
    }

    #[test]
    fn short_periodic_series_score_well_after_updates() {
        // Period <= 450 s with two periods of fit history; then step through
        // loop intervals and score each 60 s window.
        for period in [120.0, 300.0, 450.0] {
            let wave = |t: f64| 5_000.0 + 3_000.0 * (2.0 * PI * t / period).sin();
            let n0 = (2.0 * period) as usize + 60;
            let mut m = fitted(&series(wave, n0));
            let mut t = n0;
            for _ in 0..30 {
                let f = m.forecast().unwrap();
                let actual: Vec<f64> = (t..t + 60).map(|s| wave(s as f64)).collect();
                let score = wape(&actual, &f.values[..60]).unwrap();
                assert!(score < 0.25, "period {period} at {t}: {score}");
                m.update(&WorkloadSeries::new(t as u64, actual)).unwrap();
                t += 60;
            }
        }
    }

    #[test]
    fn unfit_forecaster_errors() {
        let m = HoltSeasonal::default();
        assert_eq!(m.forecast().unwrap_err(), ForecastError::Unfit);
        let mut m = HoltSeasonal::default();
        assert!(matches!(
            m.fit(&series(|_| 1.0, 50)),
            Err(ForecastError::InsufficientHistory { .. })
        ));
        assert_eq!(m.update(&series(|_| 1.0, 5)).unwrap_err(), ForecastError::Unfit);
    }

    #[test]
    fn update_skips_already_seen_samples() {
        let hist = series(|t| 100.0 + t, 300);
        let mut a = fitted(&hist);
        let b = a.clone();
        a.update(&hist.tail(60)).unwrap();
        assert_eq!(a.forecast().unwrap(), b.forecast().unwrap());
    }

    #[test]
    fn wape_examples() {
        assert_eq!(wape(&[5.0, 7.0], &[5.0, 7.0]).unwrap(), 0.0);
        assert!((wape(&[100.0, 100.0], &[110.0, 90.0]).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(wape(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(
            wape(&[0.0, 0.0], &[1.0, 1.0]).unwrap_err(),
            ForecastError::UndefinedScore
        );
        assert!(matches!(
            wape(&[1.0], &[1.0, 2.0]),
            Err(ForecastError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn fallback_examples() {
        let f = fallback_forecast(&series(|_| 500.0, 120));
        assert_eq!(f.source, ForecastSource::Fallback);
        assert!(f.values.iter().all(|v| (v - 500.0).abs() < 1e-9));

        // Slope -1 ending at 600 t/s: zero from the 600th second on.
        let f = fallback_forecast(&series(|t| 899.0 - t, 300));
        assert!((f.values[0] - 599.0).abs() < 1e-9);
        assert!((f.values[598] - 1.0).abs() < 1e-9);
        assert!(f.values[599..].iter().all(|v| *v == 0.0));

        // Tail of a ramp projects exactly.
        let ramp = series(|t| 200.0 + 3.5 * t, 1_000);
        let f = fallback_forecast(&ramp.tail(300));
        assert_eq!(f.start, 1_000);
        for (k, v) in f.values.iter().enumerate() {
            let truth = 200.0 + 3.5 * (1_000 + k) as f64;
            assert!((v - truth).abs() < 1e-6);
        }
    }

    #[test]
    fn selection_threshold_is_inclusive() {
        let recent = series(|_| 10.0, 60);
        let primary = Forecast::new(60, vec![99.0; HORIZON], ForecastSource::Primary);
        assert_eq!(
            select_forecast(primary.clone(), 0.05, &recent, 0.25).source,
            ForecastSource::Primary
        );
        assert_eq!(
            select_forecast(primary.clone(), 0.25, &recent, 0.25).source,
            ForecastSource::Primary
        );
        assert_eq!(
            select_forecast(primary, 0.30, &recent, 0.25).source,
            ForecastSource::Fallback
        );
    }

    #[test]
    fn retrain_policy() {
        let mut h = ForecasterHealth::default();
        for _ in 0..14 {
            assert!(!h.record_quality(0.5, 0.25));
        }
        assert!(!h.record_quality(0.1, 0.25));
        assert_eq!(h.consecutive_poor, 0);

        let signals: Vec<bool> = (0..30).map(|_| h.record_quality(0.5, 0.25)).collect();
        assert_eq!(signals.iter().filter(|s| **s).count(), 1);
        assert!(signals[14]);
        assert!(h.retraining);

        h.retrain_finished();
        assert!(!h.retraining);
        assert!(!h.record_quality(f64::NAN, 0.25));
        assert_eq!(h.consecutive_poor, 1);
    }

    #[test]
    fn background_retrain_hands_back_a_fitted_model() {
        let handle = RetrainHandle::spawn(HoltSeasonal::default().unfitted(), series(|_| 42.0, 200));
        let model = handle.wait().unwrap();
        assert!(model.is_fitted());
        assert!((model.forecast().unwrap().values[0] - 42.0).abs() < 1e-6);

        let handle = RetrainHandle::spawn(HoltSeasonal::default().unfitted(), series(|_| 42.0, 10));
        assert!(handle.wait().is_err());
    }

    proptest! {
        #[test]
        fn wape_is_scale_invariant(pairs in prop::collection::vec((0.1f64..1e5, 0.0f64..1e5), 1..100), k in 0.001f64..1000.0) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let f: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let ak: Vec<f64> = a.iter().map(|v| v * k).collect();
            let fk: Vec<f64> = f.iter().map(|v| v * k).collect();
            let w1 = wape(&a, &f).unwrap();
            let w2 = wape(&ak, &fk).unwrap();
            prop_assert!((w1 - w2).abs() <= 1e-9 * w1.max(1.0));
        }

        #[test]
        fn fallback_is_deterministic_and_full_length(rates in prop::collection::vec(0.0f64..1e5, 60..400)) {
            let s = WorkloadSeries::new(7, rates);
            let a = fallback_forecast(&s);
            let b = fallback_forecast(&s);
            prop_assert_eq!(a.values.len(), HORIZON);
            prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert!(a.values.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn primary_forecast_has_full_horizon(rates in prop::collection::vec(0.0f64..1e5, 120..400)) {
            let mut m = HoltSeasonal::default();
            m.fit(&WorkloadSeries::new(0, rates)).unwrap();
            let f = m.forecast().unwrap();
            prop_assert_eq!(f.values.len(), HORIZON);
            prop_assert!(f.values.iter().all(|v| *v >= 0.0));
        }
    }
}
