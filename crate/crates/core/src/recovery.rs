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

//! Recovery-time prediction for candidate scale-outs and measurement of the
//! actual recovery after a rescale.
//!
//! A restart has to reprocess everything since the last completed checkpoint
//! (assumed to be a full interval ago) plus whatever arrives while the job is
//! down. Recovery ends once the cumulative spare capacity of the new scale-out
//! covers that backlog. Recovery times always include the downtime.

use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecasting::{Forecast, WorkloadSeries};

/// Observations required before the anomaly detector classifies anything.
pub const MIN_ANOMALY_SAMPLES: u64 = 30;
/// Absolute deviation floor, as a fraction of the mean workload.
pub const ABS_FLOOR_FRACTION: f64 = 0.01;
/// Consecutive normal samples that confirm recovery.
pub const CONFIRMATION_WINDOW: usize = 10;
/// Weight of the new measurement when adapting the expected downtime.
pub const DOWNTIME_SMOOTHING: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("need {needed} s of workload history for reprocessing, have {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("anomaly detector has {got} samples, needs {MIN_ANOMALY_SAMPLES}")]
    InsufficientSamples { got: u64 },
    #[error("invalid recovery configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    /// Seconds between completed checkpoints.
    pub checkpoint_interval: u32,
    pub downtime_scale_out: f64,
    pub downtime_scale_in: f64,
    /// Upper bound on downtime plus catch-up.
    pub target_recovery_time: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            checkpoint_interval: 10,
            downtime_scale_out: 30.0,
            downtime_scale_in: 15.0,
            target_recovery_time: 600.0,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<(), RecoveryError> {
        if self.checkpoint_interval == 0 || self.downtime_scale_out <= 0.0 || self.downtime_scale_in <= 0.0 {
            return Err(RecoveryError::InvalidConfig(
                "checkpoint interval and downtimes must be positive".into(),
            ));
        }
        if self.target_recovery_time < self.downtime_scale_out.max(self.downtime_scale_in) {
            return Err(RecoveryError::InvalidConfig(format!(
                "target recovery time {} is below the expected downtime",
                self.target_recovery_time
            )));
        }
        Ok(())
    }

    pub fn downtime(&self, direction: Direction) -> f64 {
        match direction {
            Direction::ScaleIn => self.downtime_scale_in,
            Direction::ScaleOut | Direction::Failure => self.downtime_scale_out,
        }
    }

    /// Blends a measured downtime into the expected one. Zero measurements
    /// (no restart happened) are ignored.
    pub fn adapt_downtime(&mut self, direction: Direction, measured: f64) {
        if measured <= 0.0 {
            return;
        }
        let slot = match direction {
            Direction::ScaleIn => &mut self.downtime_scale_in,
            Direction::ScaleOut | Direction::Failure => &mut self.downtime_scale_out,
        };
        *slot = (1.0 - DOWNTIME_SMOOTHING) * *slot + DOWNTIME_SMOOTHING * measured;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    ScaleIn,
    ScaleOut,
    /// Restart at the same scale-out.
    Failure,
}

impl Direction {
    pub fn between(current: usize, target: usize) -> Direction {
        use std::cmp::Ordering::*;
        match target.cmp(&current) {
            Less => Direction::ScaleIn,
            Greater => Direction::ScaleOut,
            Equal => Direction::Failure,
        }
    }
}

/// Sum of per-second forecast values over `[from, to)` seconds, with partial
/// seconds weighted by their fraction. Past the horizon the last value holds.
pub fn forecast_sum(forecast: &Forecast, from: f64, to: f64) -> f64 {
    let values = &forecast.values;
    if values.is_empty() || to <= from {
        return 0.0;
    }
    let value_at = |k: usize| values[k.min(values.len() - 1)];
    let mut total = 0.0;
    let mut t = from.max(0.0);
    while t < to {
        let k = t.floor() as usize;
        let next = ((k + 1) as f64).min(to);
        total += value_at(k) * (next - t);
        t = next;
    }
    total
}

/// Worst-case backlog after a restart: a full checkpoint interval of
/// reprocessing plus the forecast arrivals during the expected downtime.
pub fn accumulated_backlog(
    history: &WorkloadSeries,
    forecast: &Forecast,
    cfg: &RecoveryConfig,
    direction: Direction,
) -> Result<f64, RecoveryError> {
    let interval = cfg.checkpoint_interval as usize;
    if history.len() < interval {
        return Err(RecoveryError::InsufficientHistory {
            needed: interval,
            got: history.len(),
        });
    }
    let reprocess: f64 = history.rates[history.len() - interval..].iter().sum();
    Ok(reprocess + forecast_sum(forecast, 0.0, cfg.downtime(direction)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPrediction {
    /// Downtime plus catch-up, in seconds; infinite when infeasible.
    pub total: f64,
    pub backlog: f64,
    pub feasible: bool,
}

/// Walks the forecast from the end of the downtime, accumulating spare
/// capacity until it covers `backlog`.
pub fn predict_recovery_time(capacity: f64, forecast: &Forecast, backlog: f64, downtime: f64) -> RecoveryPrediction {
    if backlog <= 0.0 {
        return RecoveryPrediction {
            total: downtime,
            backlog: 0.0,
            feasible: true,
        };
    }
    let start = downtime.max(0.0).ceil() as usize;
    let mut spare = 0.0;
    if capacity > 0.0 {
        for (n, f) in forecast.values.iter().skip(start).enumerate() {
            spare += (capacity - f).max(0.0);
            if spare >= backlog {
                return RecoveryPrediction {
                    total: downtime + (n + 1) as f64,
                    backlog,
                    feasible: true,
                };
            }
        }
    }
    RecoveryPrediction {
        total: f64::INFINITY,
        backlog,
        feasible: false,
    }
}

/// Running mean and variance of `workload − throughput`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AnomalyState {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub mean_workload: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deviation {
    Normal,
    /// Throughput well below the workload.
    Deficit,
    /// Throughput well above the workload, i.e. catching up.
    Surplus,
}

impl AnomalyState {
    pub fn update(&mut self, workload: f64, throughput: f64) {
        let diff = workload - throughput;
        self.count += 1;
        let n = self.count as f64;
        let delta = diff - self.mean;
        self.mean += delta / n;
        self.m2 += delta * (diff - self.mean);
        self.mean_workload += (workload - self.mean_workload) / n;
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn threshold(&self) -> f64 {
        self.variance().sqrt().max(ABS_FLOOR_FRACTION * self.mean_workload)
    }

    pub fn classify(&self, workload: f64, throughput: f64) -> Result<Deviation, RecoveryError> {
        if self.count < MIN_ANOMALY_SAMPLES {
            return Err(RecoveryError::InsufficientSamples { got: self.count });
        }
        let dev = (workload - throughput) - self.mean;
        let threshold = self.threshold();
        Ok(if dev > threshold {
            Deviation::Deficit
        } else if -dev > threshold {
            Deviation::Surplus
        } else {
            Deviation::Normal
        })
    }

    pub fn is_anomalous(&self, workload: f64, throughput: f64) -> Result<bool, RecoveryError> {
        Ok(self.classify(workload, throughput)? != Deviation::Normal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMeasurement {
    pub direction: Direction,
    /// Length of the initial throughput deficit, in seconds.
    pub downtime: f64,
    /// Seconds until normal processing resumed; `None` on timeout.
    pub recovery: Option<f64>,
}

impl RecoveryMeasurement {
    pub fn timed_out(&self) -> bool {
        self.recovery.is_none()
    }
}

/// Streaming classifier over the per-second `(workload, throughput)` samples
/// that follow a scaling action. The detector state is frozen at launch.
#[derive(Debug, Clone)]
pub struct RecoveryMonitor {
    detector: AnomalyState,
    direction: Direction,
    timeout: usize,
    seen: usize,
    downtime: usize,
    in_downtime: bool,
    candidate: Option<usize>,
    normal_run: usize,
}

impl RecoveryMonitor {
    pub fn new(detector: AnomalyState, direction: Direction, target_recovery_time: f64) -> Result<Self, RecoveryError> {
        if detector.count < MIN_ANOMALY_SAMPLES {
            return Err(RecoveryError::InsufficientSamples { got: detector.count });
        }
        Ok(RecoveryMonitor {
            detector,
            direction,
            timeout: (2.0 * target_recovery_time).ceil() as usize,
            seen: 0,
            downtime: 0,
            in_downtime: true,
            candidate: None,
            normal_run: 0,
        })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn elapsed(&self) -> usize {
        self.seen
    }

    /// Feeds one second; returns the measurement once recovery is confirmed
    /// or the timeout (twice the target recovery time) passes.
    pub fn observe(&mut self, workload: f64, throughput: f64) -> Option<RecoveryMeasurement> {
        let index = self.seen;
        self.seen += 1;
        let class = self
            .detector
            .classify(workload, throughput)
            .expect("monitor is only built with enough samples");
        if self.in_downtime {
            if class == Deviation::Deficit {
                self.downtime += 1;
            } else {
                self.in_downtime = false;
            }
        }
        if !self.in_downtime {
            if class == Deviation::Normal {
                if self.normal_run == 0 {
                    self.candidate = Some(index);
                }
                self.normal_run += 1;
                if self.normal_run >= CONFIRMATION_WINDOW {
                    return Some(RecoveryMeasurement {
                        direction: self.direction,
                        downtime: self.downtime as f64,
                        recovery: self.candidate.map(|c| c as f64),
                    });
                }
            } else {
                self.normal_run = 0;
                self.candidate = None;
            }
        }
        if self.seen >= self.timeout {
            return Some(RecoveryMeasurement {
                direction: self.direction,
                downtime: self.downtime as f64,
                recovery: None,
            });
        }
        None
    }

    /// Runs the monitor on its own thread over a live sample stream. The
    /// measurement arrives on the returned channel; a closed stream without
    /// a verdict yields nothing.
    pub fn spawn(mut self, samples: mpsc::Receiver<(f64, f64)>) -> mpsc::Receiver<RecoveryMeasurement> {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for (workload, throughput) in samples {
                if let Some(m) = self.observe(workload, throughput) {
                    let _ = tx.send(m);
                    return;
                }
            }
        });
        rx
    }
}

/// Runs a monitor over a finished sample sequence.
pub fn monitor_recovery(
    samples: impl IntoIterator<Item = (f64, f64)>,
    detector: AnomalyState,
    direction: Direction,
    target_recovery_time: f64,
) -> Result<Option<RecoveryMeasurement>, RecoveryError> {
    let mut monitor = RecoveryMonitor::new(detector, direction, target_recovery_time)?;
    Ok(samples.into_iter().find_map(|(w, t)| monitor.observe(w, t)))
}
