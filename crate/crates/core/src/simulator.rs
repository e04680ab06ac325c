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

//! Discrete-time (1 s) model of a keyed stream processing job.
//!
//! Keys hash into a fixed number of key groups, and key groups are assigned to
//! workers in contiguous ranges, so the share of work each worker receives
//! depends on the scale-out. The source reads in key proportion, which means
//! the hottest worker relative to its capacity bounds the whole job. Backlog is
//! held as one integer tuple count and splits across workers by the same
//! shares, so arrivals, processing and backlog always balance exactly.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ExecutorError, MetricsProvider, Observation, ProviderError, ScalingExecutor, WorkerWindow};
use crate::forecasting::WorkloadSeries;
use crate::model::WorkerId;

/// Seconds of per-second records retained for polling.
const RECORD_RETENTION: usize = 3_600;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("scale-out {target} outside 1..={max}")]
    InvalidTarget { target: usize, max: usize },
    #[error("invalid cluster spec: {0}")]
    InvalidSpec(String),
}

/// Relative popularity of keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KeyWeights {
    Uniform,
    /// Key of rank `k` (1-based) has weight `1 / k^s`.
    Zipf {
        s: f64,
    },
    /// One weight per key; `key_count` is ignored.
    Explicit {
        weights: Vec<f64>,
    },
}

impl KeyWeights {
    /// Normalized weights, summing to 1.
    pub fn weights(&self, key_count: usize) -> Vec<f64> {
        let raw: Vec<f64> = match self {
            KeyWeights::Uniform => vec![1.0; key_count],
            KeyWeights::Zipf { s } => (1..=key_count).map(|k| (k as f64).powf(-s)).collect(),
            KeyWeights::Explicit { weights } => weights.clone(),
        };
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSpec {
    pub max_workers: usize,
    /// Tuples per second one worker sustains at 100% CPU.
    pub unit_capacity: f64,
    /// Per-worker capacity varies uniformly within `±capacity_jitter`.
    pub capacity_jitter: f64,
    pub key_count: usize,
    pub key_weights: KeyWeights,
    pub key_groups: usize,
    pub checkpoint_interval: u32,
    pub downtime_out: u32,
    pub downtime_in: u32,
    /// Standard deviation of the multiplicative CPU noise.
    pub cpu_noise: f64,
    pub base_latency: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            max_workers: 16,
            unit_capacity: 5_000.0,
            capacity_jitter: 0.05,
            key_count: 100,
            key_weights: KeyWeights::Uniform,
            key_groups: 128,
            checkpoint_interval: 10,
            downtime_out: 30,
            downtime_in: 15,
            cpu_noise: 0.02,
            base_latency: 0.2,
        }
    }
}

fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSpec(m.to_string()));
        if self.max_workers == 0 {
            return bad("max_workers must be at least 1");
        }
        if !(self.unit_capacity > 0.0) {
            return bad("unit_capacity must be positive");
        }
        if !(0.0..1.0).contains(&self.capacity_jitter) {
            return bad("capacity_jitter must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.cpu_noise) {
            return bad("cpu_noise must be in [0, 1)");
        }
        if self.key_groups < self.max_workers {
            return bad("key_groups must be at least max_workers");
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval must be positive");
        }
        match &self.key_weights {
            KeyWeights::Explicit { weights } => {
                if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
                    return bad("explicit weights must be non-negative with a positive sum");
                }
            }
            KeyWeights::Zipf { s } if !(*s >= 0.0) => return bad("zipf exponent must be non-negative"),
            _ if self.key_count == 0 => return bad("key_count must be positive"),
            _ => {}
        }
        Ok(())
    }

    fn effective_key_count(&self) -> usize {
        match &self.key_weights {
            KeyWeights::Explicit { weights } => weights.len(),
            _ => self.key_count,
        }
    }

    pub fn key_group(&self, key: usize) -> usize {
        (mix64(key as u64) % self.key_groups as u64) as usize
    }

    /// Worker owning a key group at scale-out `n` (contiguous ranges).
    pub fn worker_for_group(&self, group: usize, n: usize) -> usize {
        group * n / self.key_groups
    }

    /// Fraction of the total key weight routed to each of `n` workers.
    pub fn worker_shares(&self, n: usize) -> Vec<f64> {
        let weights = self.key_weights.weights(self.effective_key_count());
        let mut shares = vec![0.0; n];
        for (key, w) in weights.iter().enumerate() {
            shares[self.worker_for_group(self.key_group(key), n)] += w;
        }
        shares
    }

    /// Sustainable throughput at scale-out `n` for nominal (unjittered)
    /// worker capacities.
    pub fn nominal_capacity(&self, n: usize) -> f64 {
        bottleneck_capacity(&vec![self.unit_capacity; n], &self.worker_shares(n))
    }
}

/// The job saturates once the worker with the largest share relative to its
/// capacity saturates: `min_w capacity_w / share_w`.
pub fn bottleneck_capacity(capacities: &[f64], shares: &[f64]) -> f64 {
    capacities
        .iter()
        .zip(shares)
        .filter(|(_, s)| **s > 0.0)
        .map(|(c, s)| c / s)
        .fold(f64::INFINITY, f64::min)
}

/// Apportions an integer total by `shares` with no tuple lost or created.
fn apportion(total: u64, shares: &[f64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(shares.len());
    let mut cum = 0.0;
    let mut prev = 0u64;
    for (i, s) in shares.iter().enumerate() {
        cum += s;
        let upto = if i + 1 == shares.len() {
            total
        } else {
            ((total as f64 * cum).round() as u64).min(total)
        };
        out.push(upto.saturating_sub(prev));
        prev = prev.max(upto);
    }
    out
}

/// One simulated second.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondRecord {
    pub time: u64,
    pub arrivals: u64,
    /// Tuples processed this second, including reprocessing.
    pub processed: u64,
    pub workers: usize,
    pub worker_cpu: Vec<f64>,
    pub worker_throughput: Vec<f64>,
    pub cpu_avg: f64,
    /// Backlog at the end of the second.
    pub backlog: u64,
    pub latency: f64,
    pub down: bool,
    pub cumulative_arrivals: u64,
    /// Net of tuples thrown back for reprocessing.
    pub cumulative_processed: u64,
}

impl SecondRecord {
    pub fn conserves(&self) -> bool {
        self.cumulative_arrivals == self.cumulative_processed + self.backlog
    }
}

/// A rescale and, once the backlog clears, how long recovery took.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RescaleEvent {
    pub at: u64,
    pub from: usize,
    pub to: usize,
    pub reprocessed: u64,
    /// Seconds from the rescale to the end of the first second whose
    /// remaining backlog is below that second's arrivals.
    pub recovery: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    spec: ClusterSpec,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    now: u64,
    workers: usize,
    shares: Vec<f64>,
    capacities: Vec<f64>,
    backlog: u64,
    down_until: u64,
    checkpoint_clock: u32,
    since_checkpoint: u64,
    arrival_carry: f64,
    cumulative_arrivals: u64,
    cumulative_processed: u64,
    last_rescale: u64,
    records: VecDeque<SecondRecord>,
    events: Vec<RescaleEvent>,
}

impl Simulation {
    pub fn new(spec: ClusterSpec, initial_workers: usize, seed: u64) -> Result<Self, SimError> {
        spec.validate()?;
        if initial_workers == 0 || initial_workers > spec.max_workers {
            return Err(SimError::InvalidTarget {
                target: initial_workers,
                max: spec.max_workers,
            });
        }
        let noise = (spec.cpu_noise > 0.0).then(|| Normal::new(0.0, spec.cpu_noise).expect("validated noise"));
        let mut sim = Simulation {
            shares: spec.worker_shares(initial_workers),
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            now: 0,
            workers: initial_workers,
            capacities: Vec::new(),
            backlog: 0,
            down_until: 0,
            checkpoint_clock: 0,
            since_checkpoint: 0,
            arrival_carry: 0.0,
            cumulative_arrivals: 0,
            cumulative_processed: 0,
            last_rescale: 0,
            records: VecDeque::new(),
            events: Vec::new(),
        };
        sim.draw_capacities();
        Ok(sim)
    }

    fn draw_capacities(&mut self) {
        let jitter = self.spec.capacity_jitter;
        let unit = self.spec.unit_capacity;
        self.capacities = (0..self.workers)
            .map(|_| {
                let u = if jitter > 0.0 {
                    self.rng.random_range(-1.0..=1.0)
                } else {
                    0.0
                };
                unit * (1.0 + jitter * u)
            })
            .collect();
    }

    pub fn spec(&self) -> &ClusterSpec {
        &self.spec
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn shares(&self) -> &[f64] {
        &self.shares
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn backlog(&self) -> u64 {
        self.backlog
    }

    pub fn is_down(&self) -> bool {
        self.now < self.down_until
    }

    pub fn checkpoint_clock(&self) -> u32 {
        self.checkpoint_clock
    }

    pub fn events(&self) -> &[RescaleEvent] {
        &self.events
    }

    pub fn last_record(&self) -> Option<&SecondRecord> {
        self.records.back()
    }

    pub fn records(&self) -> impl DoubleEndedIterator<Item = &SecondRecord> + ExactSizeIterator {
        self.records.iter()
    }

    /// True sustainable throughput at `scaleout`. The deployed scale-out uses
    /// the drawn capacities; any other uses nominal ones.
    pub fn ground_truth_capacity(&self, scaleout: usize) -> f64 {
        if scaleout == self.workers {
            self.current_capacity_floor() as f64
        } else {
            self.spec.nominal_capacity(scaleout)
        }
    }

    fn current_capacity_floor(&self) -> u64 {
        // Shares summed from many keys can land a hair below an exact total.
        (bottleneck_capacity(&self.capacities, &self.shares) + 1e-6).floor() as u64
    }

    /// Advances one second with `workload_rate` tuples/s arriving. Fractional
    /// rates carry over, so long-run arrivals match the rate exactly.
    pub fn step(&mut self, workload_rate: f64) -> &SecondRecord {
        let total = self.arrival_carry + workload_rate.max(0.0);
        let arrivals = total.floor() as u64;
        self.arrival_carry = total - arrivals as f64;
        let down = self.is_down();

        let processed = if down {
            0
        } else {
            (self.backlog + arrivals).min(self.current_capacity_floor())
        };
        self.backlog = self.backlog + arrivals - processed;
        self.cumulative_arrivals += arrivals;
        self.cumulative_processed += processed;

        let mut worker_cpu = Vec::with_capacity(self.workers);
        let mut worker_throughput = Vec::with_capacity(self.workers);
        for (cap, share) in self.capacities.iter().zip(&self.shares) {
            let tput = processed as f64 * share;
            let mut cpu = tput / cap;
            if let Some(n) = &self.noise {
                cpu *= 1.0 + n.sample(&mut self.rng);
            }
            worker_cpu.push(cpu.clamp(0.0, 1.0));
            worker_throughput.push(tput);
        }
        let cpu_avg = worker_cpu.iter().sum::<f64>() / self.workers as f64;

        if !down {
            self.since_checkpoint += processed;
            self.checkpoint_clock += 1;
            if self.checkpoint_clock >= self.spec.checkpoint_interval {
                self.checkpoint_clock = 0;
                self.since_checkpoint = 0;
            }
        }

        if let Some(ev) = self.events.last_mut() {
            if ev.recovery.is_none() && !down && self.backlog <= arrivals {
                ev.recovery = Some(self.now + 1 - ev.at);
            }
        }

        let total_capacity: f64 = self.capacities.iter().sum();
        let record = SecondRecord {
            time: self.now,
            arrivals,
            processed,
            workers: self.workers,
            worker_cpu,
            worker_throughput,
            cpu_avg,
            backlog: self.backlog,
            latency: self.backlog as f64 / total_capacity + self.spec.base_latency,
            down,
            cumulative_arrivals: self.cumulative_arrivals,
            cumulative_processed: self.cumulative_processed,
        };
        self.now += 1;
        if self.records.len() == RECORD_RETENTION {
            self.records.pop_front();
        }
        self.records.push_back(record);
        self.records.back().expect("just pushed")
    }

    /// Restarts the job at `target` workers. Tuples processed since the last
    /// completed checkpoint return to the backlog, keys are reassigned and
    /// worker capacities are drawn anew. The same count still restarts.
    pub fn rescale(&mut self, target: usize) -> Result<(), SimError> {
        if target == 0 || target > self.spec.max_workers {
            return Err(SimError::InvalidTarget {
                target,
                max: self.spec.max_workers,
            });
        }
        let downtime = if target < self.workers {
            self.spec.downtime_in
        } else {
            self.spec.downtime_out
        };
        let reprocessed = self.since_checkpoint;
        self.backlog += reprocessed;
        self.cumulative_processed -= reprocessed;
        self.events.push(RescaleEvent {
            at: self.now,
            from: self.workers,
            to: target,
            reprocessed,
            recovery: None,
        });
        self.workers = target;
        self.shares = self.spec.worker_shares(target);
        self.draw_capacities();
        self.down_until = self.now + downtime as u64;
        self.checkpoint_clock = 0;
        self.since_checkpoint = 0;
        self.last_rescale = self.now;
        Ok(())
    }

    /// Per-worker backlog, split by key shares.
    pub fn worker_backlog(&self) -> Vec<u64> {
        apportion(self.backlog, &self.shares)
    }
}

impl MetricsProvider for Simulation {
    fn poll(&mut self, window: usize) -> Result<Observation, ProviderError> {
        let skip = self.records.len().saturating_sub(window);
        let recent: Vec<&SecondRecord> = self.records.iter().skip(skip).collect();
        if recent.is_empty() {
            return Err(ProviderError::NoData);
        }
        let current: Vec<&&SecondRecord> = recent
            .iter()
            .filter(|r| r.time >= self.last_rescale && r.workers == self.workers)
            .collect();
        let workers = if current.is_empty() {
            Vec::new()
        } else {
            let n = current.len() as f64;
            (0..self.workers)
                .map(|w| WorkerWindow {
                    worker: WorkerId(w as u32),
                    cpu: current.iter().map(|r| r.worker_cpu[w]).sum::<f64>() / n,
                    throughput: current.iter().map(|r| r.worker_throughput[w]).sum::<f64>() / n,
                })
                .collect()
        };
        Ok(Observation {
            now: self.now,
            workers,
            workload: WorkloadSeries::new(recent[0].time, recent.iter().map(|r| r.arrivals as f64).collect()),
            throughput: recent.iter().map(|r| r.processed as f64).collect(),
            consumer_lag: self.backlog as f64,
            parallelism: self.workers,
        })
    }
}

impl ScalingExecutor for Simulation {
    fn rescale(&mut self, target: usize) -> Result<(), ExecutorError> {
        Simulation::rescale(self, target).map_err(|e| ExecutorError::Rejected(e.to_string()))
    }
}
