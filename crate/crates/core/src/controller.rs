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

//! The monitor / analyze / plan / execute loop.
//!
//! Every tick polls the running job, folds the window into the shared
//! [`Knowledge`], rebuilds the capacity table and the workload forecast, and
//! picks the smallest scale-out that covers the workload, recovers within the
//! target time and stays ahead of the forecast. Knowledge is updated on a copy
//! and committed only after every phase succeeded.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecasting::{
    fallback_forecast, select_forecast, wape, Forecast, ForecastError, ForecastSource, Forecaster, ForecasterHealth,
    HoltSeasonal, RetrainHandle, WorkloadSeries, FALLBACK_WINDOW, MIN_FIT_HISTORY, POOR_FORECAST_THRESHOLD,
    RETRAIN_WINDOW,
};
use crate::model::{
    current_scaleout_capacity, extrapolate_capacity_table, CapacityTable, WorkerId, WorkerModel,
    DEFAULT_OBSERVED_MAX_AGE,
};
use crate::recovery::{
    accumulated_backlog, predict_recovery_time, AnomalyState, Direction, RecoveryConfig, RecoveryMeasurement,
    RecoveryMonitor, RecoveryPrediction,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("no metrics available yet")]
    NoData,
    #[error("metrics provider unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecutorError {
    #[error("rescale rejected: {0}")]
    Rejected(String),
    #[error("executor unavailable: {0}")]
    Unavailable(String),
}

/// Windowed means for one worker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorkerWindow {
    pub worker: WorkerId,
    pub cpu: f64,
    pub throughput: f64,
}

/// What one poll of the running job returns.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Time at the end of the window.
    pub now: u64,
    pub workers: Vec<WorkerWindow>,
    /// Per-second arrivals over the window.
    pub workload: WorkloadSeries,
    /// Per-second total throughput, aligned with `workload`.
    pub throughput: Vec<f64>,
    pub consumer_lag: f64,
    pub parallelism: usize,
}

pub trait MetricsProvider {
    fn poll(&mut self, window: usize) -> Result<Observation, ProviderError>;
}

pub trait ScalingExecutor {
    fn rescale(&mut self, target: usize) -> Result<(), ExecutorError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionReason {
    NoChange,
    RecentRescaleOk,
    ScaleOut,
    ScaleIn,
    ForcedMax,
    GracePeriod,
}

impl DecisionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecisionReason::NoChange => "no-change",
            DecisionReason::RecentRescaleOk => "recent-rescale-ok",
            DecisionReason::ScaleOut => "scale-out",
            DecisionReason::ScaleIn => "scale-in",
            DecisionReason::ForcedMax => "forced-max",
            DecisionReason::GracePeriod => "grace-period",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingDecision {
    pub target_parallelism: usize,
    pub reason: DecisionReason,
    /// Predicted recovery time of the chosen scale-out, when one was computed.
    pub predicted_recovery: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Seconds between ticks.
    pub loop_interval: u64,
    /// No decision is taken this long after any executed action.
    pub grace_period: f64,
    /// A recent rescale is kept for this long while it still suffices.
    pub recheck_interval: f64,
    /// Forecast seconds that count as "until the next tick".
    pub near_horizon: usize,
    pub max_scaleout: usize,
    pub recovery: RecoveryConfig,
    pub poor_forecast_threshold: f64,
    pub observed_max_age: f64,
    /// Seconds of workload history kept.
    pub history_retention: usize,
    /// Wait for background results at the start of the next tick instead of
    /// polling. Keeps simulated runs reproducible.
    pub blocking_handoffs: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            loop_interval: 60,
            grace_period: 180.0,
            recheck_interval: 600.0,
            near_horizon: 60,
            max_scaleout: 16,
            recovery: RecoveryConfig::default(),
            poor_forecast_threshold: POOR_FORECAST_THRESHOLD,
            observed_max_age: DEFAULT_OBSERVED_MAX_AGE,
            history_retention: RETRAIN_WINDOW,
            blocking_handoffs: true,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        self.recovery
            .validate()
            .map_err(|e| ControllerError::InvalidConfig(e.to_string()))?;
        if self.loop_interval == 0 || self.max_scaleout == 0 || self.near_horizon == 0 {
            return Err(ControllerError::InvalidConfig(
                "loop_interval, max_scaleout and near_horizon must be positive".into(),
            ));
        }
        if self.history_retention < MIN_FIT_HISTORY.max(FALLBACK_WINDOW) {
            return Err(ControllerError::InvalidConfig(format!(
                "history_retention must be at least {}",
                MIN_FIT_HISTORY.max(FALLBACK_WINDOW)
            )));
        }
        Ok(())
    }
}

/// State shared by all phases.
#[derive(Debug, Clone, PartialEq)]
pub struct Knowledge {
    pub workers: BTreeMap<WorkerId, WorkerModel>,
    pub capacity: CapacityTable,
    pub history: WorkloadSeries,
    pub forecast: Option<Forecast>,
    pub health: ForecasterHealth,
    pub anomaly: AnomalyState,
    pub recovery: RecoveryConfig,
    pub last_rescale_time: Option<f64>,
    pub last_action_time: Option<f64>,
    pub consumer_lag: f64,
    pub current_parallelism: usize,
    pub max_scaleout: usize,
    /// Mean workload over the last window.
    pub w_avg: f64,
    pub now: f64,
    pub loop_count: u64,
}

impl Knowledge {
    pub fn new(current_parallelism: usize, max_scaleout: usize, recovery: RecoveryConfig) -> Self {
        Knowledge {
            workers: BTreeMap::new(),
            capacity: CapacityTable::new(),
            history: WorkloadSeries::default(),
            forecast: None,
            health: ForecasterHealth::default(),
            anomaly: AnomalyState::default(),
            recovery,
            last_rescale_time: None,
            last_action_time: None,
            consumer_lag: 0.0,
            current_parallelism: current_parallelism.clamp(1, max_scaleout),
            max_scaleout,
            w_avg: 0.0,
            now: 0.0,
            loop_count: 0,
        }
    }
}

/// Everything [`decide`] looks at, captured so decisions can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionInput {
    pub now: f64,
    pub current: usize,
    pub max_scaleout: usize,
    /// Capacity of scale-out `i` at index `i - 1`.
    pub capacities: Vec<f64>,
    pub w_avg: f64,
    pub consumer_lag: f64,
    pub forecast: Forecast,
    /// Workload over the last checkpoint interval.
    pub reprocess: WorkloadSeries,
    pub recovery: RecoveryConfig,
    pub last_rescale: Option<f64>,
    pub last_action: Option<f64>,
    pub grace_period: f64,
    pub recheck_interval: f64,
    pub near_horizon: usize,
}

impl DecisionInput {
    pub fn capacity(&self, scaleout: usize) -> f64 {
        self.capacities.get(scaleout.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    /// Predicted recovery if the job restarts at `scaleout`.
    pub fn recovery_for(&self, scaleout: usize) -> RecoveryPrediction {
        let direction = Direction::between(self.current, scaleout);
        match accumulated_backlog(&self.reprocess, &self.forecast, &self.recovery, direction) {
            Ok(backlog) => predict_recovery_time(
                self.capacity(scaleout),
                &self.forecast,
                backlog,
                self.recovery.downtime(direction),
            ),
            Err(_) => RecoveryPrediction {
                total: f64::INFINITY,
                backlog: f64::NAN,
                feasible: false,
            },
        }
    }
}

/// The scale-out decision procedure. Pure: equal inputs give equal outputs.
pub fn decide(input: &DecisionInput) -> ScalingDecision {
    let current = input.current;
    let keep = |reason| ScalingDecision {
        target_parallelism: current,
        reason,
        predicted_recovery: None,
    };
    if let Some(t) = input.last_action {
        if input.now - t < input.grace_period {
            return keep(DecisionReason::GracePeriod);
        }
    }
    let c_cur = input.capacity(current);
    if let Some(t) = input.last_rescale {
        if input.now - t < input.recheck_interval
            && c_cur > input.w_avg
            && c_cur > input.forecast.max_over(input.near_horizon)
        {
            return keep(DecisionReason::RecentRescaleOk);
        }
    }
    let horizon_max = input.forecast.max();
    for i in 1..=input.max_scaleout {
        let c = input.capacity(i);
        if !(c > input.w_avg) {
            continue;
        }
        let rt = input.recovery_for(i);
        if !(rt.total <= input.recovery.target_recovery_time) {
            continue;
        }
        if c < input.forecast.max_over(rt.total.ceil() as usize) {
            continue;
        }
        if i == current {
            return ScalingDecision {
                target_parallelism: i,
                reason: DecisionReason::NoChange,
                predicted_recovery: Some(rt.total),
            };
        }
        if i < current && c < input.consumer_lag {
            continue;
        }
        if !(c > horizon_max) {
            continue;
        }
        return ScalingDecision {
            target_parallelism: i,
            reason: if i > current {
                DecisionReason::ScaleOut
            } else {
                DecisionReason::ScaleIn
            },
            predicted_recovery: Some(rt.total),
        };
    }
    let rt = input.recovery_for(input.max_scaleout);
    if !rt.feasible || rt.total > input.recovery.target_recovery_time {
        warn!(
            "no scale-out meets every condition; forcing {} (predicted recovery {:.0} s exceeds target)",
            input.max_scaleout, rt.total
        );
    }
    ScalingDecision {
        target_parallelism: input.max_scaleout,
        reason: DecisionReason::ForcedMax,
        predicted_recovery: Some(rt.total),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionRecord {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub reason: DecisionReason,
    pub predicted_recovery: Option<f64>,
    pub executed: bool,
    pub error: Option<String>,
}

/// What happened during one tick.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TickReport {
    pub time: f64,
    pub loop_count: u64,
    pub skipped: Option<String>,
    pub w_avg: f64,
    pub current_capacity: Option<f64>,
    pub wape: Option<f64>,
    pub forecast_source: Option<ForecastSource>,
    pub retrain_started: bool,
    pub retrain_completed: bool,
    pub recovery: Option<RecoveryMeasurement>,
    pub input: Option<DecisionInput>,
    pub decision: Option<ScalingDecision>,
    pub action: Option<ActionRecord>,
}

/// A recovery monitor on its own thread. Each batch of samples gets exactly
/// one reply, so the controller can wait for it deterministically.
struct RecoveryTask {
    since: u64,
    samples: mpsc::Sender<Vec<(f64, f64)>>,
    replies: mpsc::Receiver<Option<RecoveryMeasurement>>,
    pending: usize,
}

impl RecoveryTask {
    fn spawn(mut monitor: RecoveryMonitor, since: u64) -> Self {
        let (samples, batches) = mpsc::channel::<Vec<(f64, f64)>>();
        let (reply, replies) = mpsc::channel();
        thread::spawn(move || {
            for batch in batches {
                let verdict = batch.into_iter().find_map(|(w, t)| monitor.observe(w, t));
                let done = verdict.is_some();
                if reply.send(verdict).is_err() || done {
                    return;
                }
            }
        });
        RecoveryTask {
            since,
            samples,
            replies,
            pending: 0,
        }
    }

    fn send(&mut self, batch: Vec<(f64, f64)>) {
        if self.samples.send(batch).is_ok() {
            self.pending += 1;
        }
    }

    /// `Err(())` when the monitor thread is gone without a verdict.
    fn collect(&mut self, blocking: bool) -> Result<Option<RecoveryMeasurement>, ()> {
        while self.pending > 0 {
            let reply = if blocking {
                self.replies.recv().map_err(|_| ())?
            } else {
                match self.replies.try_recv() {
                    Ok(r) => r,
                    Err(mpsc::TryRecvError::Empty) => return Ok(None),
                    Err(mpsc::TryRecvError::Disconnected) => return Err(()),
                }
            };
            self.pending -= 1;
            if reply.is_some() {
                return Ok(reply);
            }
        }
        Ok(None)
    }
}

pub struct Controller {
    config: ControllerConfig,
    knowledge: Knowledge,
    forecaster: Box<dyn Forecaster>,
    last_primary: Option<Forecast>,
    retrain: Option<RetrainHandle>,
    recovery_task: Option<RecoveryTask>,
}

impl Controller {
    pub fn new(config: ControllerConfig, initial_parallelism: usize) -> Result<Self, ControllerError> {
        Self::with_forecaster(config, initial_parallelism, Box::new(HoltSeasonal::default()))
    }

    pub fn with_forecaster(
        config: ControllerConfig,
        initial_parallelism: usize,
        forecaster: Box<dyn Forecaster>,
    ) -> Result<Self, ControllerError> {
        config.validate()?;
        let knowledge = Knowledge::new(initial_parallelism, config.max_scaleout, config.recovery.clone());
        Ok(Controller {
            config,
            knowledge,
            forecaster,
            last_primary: None,
            retrain: None,
            recovery_task: None,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn knowledge(&self) -> &Knowledge {
        &self.knowledge
    }

    /// Runs one full tick against a system that is both provider and executor.
    pub fn tick<S: MetricsProvider + ScalingExecutor>(&mut self, system: &mut S) -> TickReport {
        let mut report = self.observe_and_plan(system);
        self.execute(&mut report, system);
        report
    }

    /// Monitor, analyze and plan. The decision is left in the report for
    /// [`Controller::execute`].
    pub fn observe_and_plan(&mut self, provider: &mut dyn MetricsProvider) -> TickReport {
        let mut report = TickReport::default();
        self.collect_handoffs(&mut report);

        let obs = match provider.poll(self.config.loop_interval as usize) {
            Ok(o) => o,
            Err(e) => {
                warn!("skipping tick: {e}");
                self.knowledge.loop_count += 1;
                report.loop_count = self.knowledge.loop_count;
                report.time = self.knowledge.now;
                report.skipped = Some(e.to_string());
                return report;
            }
        };

        let mut k = self.knowledge.clone();
        let fresh = self.monitor(&mut k, &obs);
        report.time = k.now;
        report.loop_count = k.loop_count;
        report.w_avg = k.w_avg;

        let primary = self.analyze(&mut k, &fresh, &mut report);

        let ready = k.history.len() >= MIN_FIT_HISTORY.max(k.recovery.checkpoint_interval as usize)
            && !k.capacity.is_empty()
            && k.forecast.is_some();
        if ready {
            let input = self.decision_input(&k);
            let decision = decide(&input);
            debug!(
                "t={} current={} w_avg={:.0} lag={:.0} -> {} ({})",
                k.now,
                k.current_parallelism,
                k.w_avg,
                k.consumer_lag,
                decision.target_parallelism,
                decision.reason.as_str()
            );
            report.input = Some(input);
            report.decision = Some(decision);
        } else {
            debug!("t={} warming up ({} s of history)", k.now, k.history.len());
        }

        self.knowledge = k;
        self.last_primary = primary;
        report
    }

    /// Applies the planned decision. Unchanged targets never reach the
    /// executor; a failed rescale leaves the knowledge untouched so the next
    /// tick decides again.
    pub fn execute(&mut self, report: &mut TickReport, executor: &mut dyn ScalingExecutor) {
        let Some(decision) = report.decision else { return };
        let from = self.knowledge.current_parallelism;
        let to = decision.target_parallelism;
        if to == from {
            return;
        }
        let mut record = ActionRecord {
            time: self.knowledge.now,
            from,
            to,
            reason: decision.reason,
            predicted_recovery: decision.predicted_recovery,
            executed: false,
            error: None,
        };
        if let Err(e) = executor.rescale(to) {
            warn!("rescale {from} -> {to} failed: {e}");
            record.error = Some(e.to_string());
            report.action = Some(record);
            return;
        }
        info!(
            "t={} rescaled {} -> {} ({})",
            self.knowledge.now,
            from,
            to,
            decision.reason.as_str()
        );
        record.executed = true;
        let k = &mut self.knowledge;
        k.last_action_time = Some(k.now);
        k.last_rescale_time = Some(k.now);
        k.current_parallelism = to;
        k.workers.clear();
        let direction = Direction::between(from, to);
        self.recovery_task = match RecoveryMonitor::new(k.anomaly, direction, k.recovery.target_recovery_time) {
            Ok(m) => Some(RecoveryTask::spawn(m, k.now as u64)),
            Err(e) => {
                debug!("recovery not monitored: {e}");
                None
            }
        };
        report.action = Some(record);
    }

    /// Ticks every `interval` of wall time until `stop` is set.
    pub fn run_loop<S: MetricsProvider + ScalingExecutor>(
        &mut self,
        system: &mut S,
        interval: Duration,
        stop: &AtomicBool,
        mut on_tick: impl FnMut(&TickReport),
    ) {
        while !stop.load(Ordering::Relaxed) {
            let report = self.tick(system);
            on_tick(&report);
            thread::sleep(interval);
        }
    }

    fn collect_handoffs(&mut self, report: &mut TickReport) {
        let blocking = self.config.blocking_handoffs;
        if let Some(handle) = self.retrain.take() {
            let result = if blocking {
                Some(handle.wait())
            } else {
                let r = handle.try_take();
                if r.is_none() {
                    self.retrain = Some(handle);
                }
                r
            };
            if let Some(result) = result {
                match result {
                    Ok(mut model) => match model.update(&self.knowledge.history) {
                        Ok(()) => {
                            self.forecaster = model;
                            report.retrain_completed = true;
                        }
                        Err(e) => warn!("retrained model rejected: {e}"),
                    },
                    Err(e) => warn!("retrain failed: {e}"),
                }
                self.knowledge.health.retrain_finished();
            }
        }
        if let Some(task) = self.recovery_task.as_mut() {
            match task.collect(blocking) {
                Ok(Some(m)) => {
                    info!(
                        "recovery measured: downtime {} s, recovery {:?} s",
                        m.downtime, m.recovery
                    );
                    self.knowledge.recovery.adapt_downtime(m.direction, m.downtime);
                    report.recovery = Some(m);
                    self.recovery_task = None;
                }
                Ok(None) => {}
                Err(()) => {
                    warn!("recovery monitor stopped without a result");
                    self.recovery_task = None;
                }
            }
        }
    }

    /// Folds one observation into `k`; returns the samples not seen before
    /// as `(workload, throughput)` series.
    fn monitor(&self, k: &mut Knowledge, obs: &Observation) -> (WorkloadSeries, Vec<f64>) {
        k.loop_count += 1;
        k.now = obs.now as f64;
        let skip = if k.history.is_empty() {
            0
        } else {
            (k.history.end().saturating_sub(obs.workload.start) as usize).min(obs.workload.len())
        };
        let fresh = WorkloadSeries::new(obs.workload.start + skip as u64, obs.workload.rates[skip..].to_vec());
        let fresh_tput = obs.throughput[skip.min(obs.throughput.len())..].to_vec();
        if !fresh.is_empty() {
            k.history.extend(&fresh);
            k.history.truncate_front(self.config.history_retention);
        }
        k.w_avg = fresh.mean().or_else(|| obs.workload.mean()).unwrap_or(0.0);

        let parallelism = obs.parallelism.clamp(1, k.max_scaleout);
        if parallelism != k.current_parallelism {
            k.workers.clear();
            k.current_parallelism = parallelism;
        }
        k.workers.retain(|id, _| obs.workers.iter().any(|w| w.worker == *id));
        for w in &obs.workers {
            k.workers.entry(w.worker).or_default().observe(w.cpu, w.throughput);
        }
        k.consumer_lag = obs.consumer_lag.max(0.0);
        (fresh, fresh_tput)
    }

    /// Capacity table, forecast and anomaly state. Returns the new primary
    /// forecast, scored at the next tick.
    fn analyze(
        &mut self,
        k: &mut Knowledge,
        (fresh, fresh_tput): &(WorkloadSeries, Vec<f64>),
        report: &mut TickReport,
    ) -> Option<Forecast> {
        match current_scaleout_capacity(&k.workers) {
            Ok(c) => {
                report.current_capacity = Some(c);
                k.capacity = extrapolate_capacity_table(
                    c,
                    k.current_parallelism,
                    k.max_scaleout,
                    &k.capacity,
                    k.now,
                    self.config.observed_max_age,
                );
            }
            Err(e) => debug!("capacity table kept: {e}"),
        }

        if self.forecaster.is_fitted() {
            if let Err(e) = self.forecaster.update(fresh) {
                warn!("forecaster update failed: {e}");
            }
        } else if k.history.len() >= MIN_FIT_HISTORY {
            if let Err(e) = self.forecaster.fit(&k.history) {
                warn!("initial fit failed: {e}");
            }
        }

        let threshold = self.config.poor_forecast_threshold;
        if let Some(prev) = &self.last_primary {
            if let Some(score) = score_against(prev, fresh) {
                report.wape = Some(score);
                if k.health.record_quality(score, threshold) {
                    info!("forecast poor for {} ticks; retraining", k.health.consecutive_poor);
                    report.retrain_started = true;
                    self.retrain = Some(RetrainHandle::spawn(
                        self.forecaster.unfitted(),
                        k.history.tail(RETRAIN_WINDOW),
                    ));
                }
            }
        }

        let primary = self.forecaster.forecast().ok();
        let recent = k.history.tail(FALLBACK_WINDOW);
        let forecast = match &primary {
            Some(p) => select_forecast(p.clone(), k.health.last_wape.unwrap_or(0.0), &recent, threshold),
            None if !recent.is_empty() => fallback_forecast(&recent),
            None => return primary,
        };
        report.forecast_source = Some(forecast.source);
        k.forecast = Some(forecast);

        match self.recovery_task.as_mut() {
            Some(task) => {
                let batch = fresh
                    .rates
                    .iter()
                    .zip(fresh_tput)
                    .enumerate()
                    .filter(|(i, _)| fresh.start + *i as u64 >= task.since)
                    .map(|(_, (w, t))| (*w, *t))
                    .collect();
                task.send(batch);
            }
            None => {
                for (w, t) in fresh.rates.iter().zip(fresh_tput) {
                    k.anomaly.update(*w, *t);
                }
            }
        }
        primary
    }

    fn decision_input(&self, k: &Knowledge) -> DecisionInput {
        DecisionInput {
            now: k.now,
            current: k.current_parallelism,
            max_scaleout: k.max_scaleout,
            capacities: (1..=k.max_scaleout)
                .map(|i| k.capacity.capacity(i).unwrap_or(0.0))
                .collect(),
            w_avg: k.w_avg,
            consumer_lag: k.consumer_lag,
            forecast: k.forecast.clone().expect("checked by caller"),
            reprocess: k.history.tail(k.recovery.checkpoint_interval as usize),
            recovery: k.recovery.clone(),
            last_rescale: k.last_rescale_time,
            last_action: k.last_action_time,
            grace_period: self.config.grace_period,
            recheck_interval: self.config.recheck_interval,
            near_horizon: self.config.near_horizon,
        }
    }
}

/// Scores the seconds of `actual` that the forecast covers.
fn score_against(forecast: &Forecast, actual: &WorkloadSeries) -> Option<f64> {
    let offset = actual.start.checked_sub(forecast.start)? as usize;
    let n = actual.len().min(forecast.values.len().saturating_sub(offset));
    if n == 0 {
        return None;
    }
    match wape(&actual.rates[..n], &forecast.values[offset..offset + n]) {
        Ok(w) => Some(w),
        Err(ForecastError::UndefinedScore) => None,
        Err(e) => {
            warn!("forecast scoring failed: {e}");
            None
        }
    }
}
