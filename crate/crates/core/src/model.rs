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

//! Worker-level capacity modeling.
//!
//! Throughput and CPU utilization of a worker are linearly related, so the
//! maximum capacity of a worker is estimated by an online least-squares line
//! of throughput over CPU, evaluated at the CPU level the worker is expected to
//! reach when the hottest worker of the job saturates. Summing those estimates
//! gives the capacity of the current scale-out, which is then extrapolated to
//! every other scale-out.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum CPU variance before the regression line is trusted.
pub const MIN_CPU_VARIANCE: f64 = 1e-6;

/// Samples below this utilization are treated as idle and never enter a
/// regression; it is also the floor for the hottest worker when computing
/// skew ratios.
pub const IDLE_CPU: f64 = 0.01;

/// Default age after which an observed capacity reverts to a prediction.
pub const DEFAULT_OBSERVED_MAX_AGE: f64 = 3600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("capacity undefined for an idle worker (cpu = {cpu})")]
    IdleWorker { cpu: f64 },
    #[error("regression needs at least 2 samples with cpu variance >= {MIN_CPU_VARIANCE} (have {count} samples, variance {variance})")]
    InsufficientData { count: u64, variance: f64 },
    #[error("regression slope is negative ({slope}); throughput does not grow with cpu")]
    NegativeSlope { slope: f64 },
    #[error("skew ratio undefined: hottest worker cpu {max_cpu} is idle")]
    UndefinedSkew { max_cpu: f64 },
    #[error("no worker has a usable capacity model")]
    NoWorkers,
}

/// Identifier of one parallel worker instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorkerId(pub u32);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "worker-{}", self.0)
    }
}

/// One worker's observation: CPU utilization in `[0, 1]` and throughput in
/// tuples per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub worker: WorkerId,
    pub timestamp: f64,
    pub cpu: f64,
    pub throughput: f64,
}

impl MetricSample {
    pub fn new(worker: WorkerId, timestamp: f64, cpu: f64, throughput: f64) -> Self {
        MetricSample {
            worker,
            timestamp,
            cpu,
            throughput,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.cpu < IDLE_CPU
    }
}

/// Quick capacity estimate: the throughput a worker would reach at 100% CPU if
/// throughput scaled proportionally with utilization.
pub fn simple_capacity(throughput: f64, cpu: f64) -> Result<f64, ModelError> {
    if cpu <= 0.0 {
        return Err(ModelError::IdleWorker { cpu });
    }
    Ok(throughput / cpu)
}

/// Welford-style accumulator for the least-squares line of throughput (y) on
/// CPU utilization (x). No samples are retained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionState {
    pub count: u64,
    pub mean_cpu: f64,
    pub mean_tput: f64,
    /// Sum of squared CPU deviations from the running mean.
    pub m2_cpu: f64,
    /// Sum of cross deviations between CPU and throughput.
    pub co_moment: f64,
}

impl RegressionState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, cpu: f64, throughput: f64) {
        self.count += 1;
        let n = self.count as f64;
        let dx = cpu - self.mean_cpu;
        self.mean_cpu += dx / n;
        self.mean_tput += (throughput - self.mean_tput) / n;
        // Uses the old x-deviation and the new y-mean, which keeps both sums exact.
        self.m2_cpu += dx * (cpu - self.mean_cpu);
        self.co_moment += dx * (throughput - self.mean_tput);
    }

    /// Value-semantics update with one sample.
    pub fn updated(mut self, sample: &MetricSample) -> Self {
        self.push(sample.cpu, sample.throughput);
        self
    }

    /// Population variance of CPU.
    pub fn cpu_variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2_cpu / self.count as f64).max(0.0)
        }
    }

    /// Population covariance of CPU and throughput.
    pub fn covariance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.co_moment / self.count as f64
        }
    }

    fn check_fit(&self) -> Result<(), ModelError> {
        let variance = self.cpu_variance();
        if self.count < 2 || variance < MIN_CPU_VARIANCE {
            return Err(ModelError::InsufficientData {
                count: self.count,
                variance,
            });
        }
        Ok(())
    }

    pub fn slope(&self) -> Result<f64, ModelError> {
        self.check_fit()?;
        Ok(self.covariance() / self.cpu_variance())
    }

    pub fn intercept(&self) -> Result<f64, ModelError> {
        Ok(self.mean_tput - self.slope()? * self.mean_cpu)
    }

    /// Throughput predicted at `cpu_desired`, clamped at zero. A negative
    /// slope is rejected so callers fall back to [`simple_capacity`].
    pub fn predict_capacity(&self, cpu_desired: f64) -> Result<f64, ModelError> {
        let slope = self.slope()?;
        if slope < 0.0 {
            return Err(ModelError::NegativeSlope { slope });
        }
        let capacity = self.mean_tput - slope * self.mean_cpu + slope * cpu_desired;
        Ok(capacity.max(0.0))
    }
}

/// CPU level a worker reaches when the hottest worker saturates: its share of
/// the hottest worker's utilization.
pub fn worker_max_cpu(worker_cpu: f64, max_cpu_among_workers: f64) -> Result<f64, ModelError> {
    if max_cpu_among_workers < IDLE_CPU {
        return Err(ModelError::UndefinedSkew {
            max_cpu: max_cpu_among_workers,
        });
    }
    Ok((worker_cpu / max_cpu_among_workers).clamp(0.0, 1.0))
}

/// Per-worker model: its regression plus the most recent (windowed) sample,
/// which drives the skew ratio and the simple-capacity fallback.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerModel {
    pub regression: RegressionState,
    pub latest_cpu: f64,
    pub latest_tput: f64,
}

impl WorkerModel {
    /// Records a sample as the latest observation; non-idle samples also feed
    /// the regression.
    pub fn observe(&mut self, cpu: f64, throughput: f64) {
        self.latest_cpu = cpu;
        self.latest_tput = throughput;
        if cpu >= IDLE_CPU {
            self.regression.push(cpu, throughput);
        }
    }

    /// Capacity of this worker when the hottest worker (at `max_cpu`) saturates.
    pub fn capacity(&self, max_cpu: f64) -> Result<f64, ModelError> {
        let target_cpu = worker_max_cpu(self.latest_cpu, max_cpu)?;
        match self.regression.predict_capacity(target_cpu) {
            Ok(c) => Ok(c),
            Err(ModelError::InsufficientData { .. }) | Err(ModelError::NegativeSlope { .. }) => {
                Ok(simple_capacity(self.latest_tput, self.latest_cpu)? * target_cpu)
            }
            Err(e) => Err(e),
        }
    }
}

/// Sum of the skew-limited capacities of all non-idle workers.
pub fn current_scaleout_capacity(workers: &BTreeMap<WorkerId, WorkerModel>) -> Result<f64, ModelError> {
    let active: Vec<&WorkerModel> = workers.values().filter(|w| w.latest_cpu >= IDLE_CPU).collect();
    if active.is_empty() {
        return Err(ModelError::NoWorkers);
    }
    let max_cpu = active.iter().map(|w| w.latest_cpu).fold(0.0, f64::max);
    active.iter().map(|w| w.capacity(max_cpu)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacitySource {
    Observed,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityEntry {
    pub capacity: f64,
    pub source: CapacitySource,
    /// Simulation or wall time at which the entry was produced.
    pub recorded_at: f64,
}

/// Estimated maximum throughput per scale-out `1..=max`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CapacityTable {
    entries: BTreeMap<usize, CapacityEntry>,
}

impl CapacityTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, scaleout: usize) -> Option<&CapacityEntry> {
        self.entries.get(&scaleout)
    }

    pub fn capacity(&self, scaleout: usize) -> Option<f64> {
        self.entries.get(&scaleout).map(|e| e.capacity)
    }

    pub fn insert(&mut self, scaleout: usize, entry: CapacityEntry) {
        self.entries.insert(scaleout, entry);
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &CapacityEntry)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn age(&self, scaleout: usize, now: f64) -> Option<f64> {
        self.entries.get(&scaleout).map(|e| now - e.recorded_at)
    }
}

/// Builds the capacity table from the current scale-out's measured capacity.
///
/// The current scale-out is stored as observed; every other scale-out gets
/// the average per-worker capacity times its worker count, unless an observed
/// entry younger than `observed_max_age` exists for it.
pub fn extrapolate_capacity_table(
    current_capacity: f64,
    current_scaleout: usize,
    max_scaleout: usize,
    history: &CapacityTable,
    now: f64,
    observed_max_age: f64,
) -> CapacityTable {
    assert!(current_scaleout >= 1, "current scale-out must be at least 1");
    let per_worker = current_capacity / current_scaleout as f64;
    let mut table = CapacityTable::new();
    for i in 1..=max_scaleout.max(current_scaleout) {
        let entry = if i == current_scaleout {
            CapacityEntry {
                capacity: current_capacity,
                source: CapacitySource::Observed,
                recorded_at: now,
            }
        } else {
            match history.get(i) {
                Some(e) if e.source == CapacitySource::Observed && now - e.recorded_at <= observed_max_age => *e,
                _ => CapacityEntry {
                    capacity: per_worker * i as f64,
                    source: CapacitySource::Predicted,
                    recorded_at: now,
                },
            }
        };
        table.insert(i, entry);
    }
    table
}

/// Full estimation pass: current capacity from the worker models, then the
/// extrapolated table.
pub fn estimate_capacity_table(
    workers: &BTreeMap<WorkerId, WorkerModel>,
    current_scaleout: usize,
    max_scaleout: usize,
    history: &CapacityTable,
    now: f64,
    observed_max_age: f64,
) -> Result<CapacityTable, ModelError> {
    let current = current_scaleout_capacity(workers)?;
    Ok(extrapolate_capacity_table(
        current,
        current_scaleout,
        max_scaleout,
        history,
        now,
        observed_max_age,
    ))
}
