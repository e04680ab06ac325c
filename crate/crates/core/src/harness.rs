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

//! Experiment harness: scenarios, workload traces, runs and reports.
//!
//! Every controller in a scenario drives its own simulator built from the
//! same cluster spec, seed and trace. Runs execute on separate threads; a
//! panicking controller only fails its own run.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::thread;

use log::{debug, info};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{Hpa, ThresholdPolicy, HPA_TOLERANCE};
use crate::controller::{Controller, ControllerConfig, TickReport};
use crate::simulator::{ClusterSpec, RescaleEvent, SimError, Simulation};

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable that overrides the scenario seed.
pub const SEED_ENV: &str = "DSPSCALE_SEED";
pub const CSV_HEADER: [&str; 8] = [
    "time_s",
    "workload",
    "throughput",
    "workers",
    "cpu_avg",
    "consumer_lag",
    "latency_p95_s",
    "decision_event",
];
pub const SUMMARY_FILE: &str = "summary.txt";
const KV_MARKER: &str = "[summary]";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("{path}:{line}: {message}")]
    Trace { path: String, line: u64, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<SimError> for HarnessError {
    fn from(e: SimError) -> Self {
        HarnessError::Scenario(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSpec {
    /// `offset + amplitude · sin(2π · periods · t / duration)`, clamped at 0.
    Sine {
        amplitude: f64,
        offset: f64,
        periods: f64,
        duration: u64,
    },
    /// `base` everywhere, plus `spike_height` for `spike_width` seconds at
    /// each position.
    Spikes {
        base: f64,
        spike_height: f64,
        spike_width: u64,
        positions: Vec<u64>,
        duration: Option<u64>,
    },
    /// One rate per line, or `time_s,workload` rows; a header is optional.
    Csv {
        path: PathBuf,
        #[serde(default = "one")]
        scale_factor: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// Builds the per-second workload series for `spec`. Relative CSV paths
/// resolve against `base_dir`.
pub fn generate_trace(spec: &TraceSpec, base_dir: &Path) -> Result<Vec<f64>, HarnessError> {
    match spec {
        TraceSpec::Sine {
            amplitude,
            offset,
            periods,
            duration,
        } => {
            if *duration == 0 {
                return Err(HarnessError::Scenario("sine duration must be positive".into()));
            }
            let d = *duration as f64;
            Ok((0..*duration)
                .map(|t| (offset + amplitude * (2.0 * PI * periods * t as f64 / d).sin()).max(0.0))
                .collect())
        }
        TraceSpec::Spikes {
            base,
            spike_height,
            spike_width,
            positions,
            duration,
        } => {
            if *base < 0.0 || base + spike_height < 0.0 {
                return Err(HarnessError::Scenario("spike trace must stay non-negative".into()));
            }
            let natural = positions.iter().map(|p| p + spike_width).max().unwrap_or(0);
            let n = duration.unwrap_or(natural);
            let mut out = vec![*base; n as usize];
            for p in positions {
                for t in *p..(p + spike_width).min(n) {
                    out[t as usize] = base + spike_height;
                }
            }
            Ok(out)
        }
        TraceSpec::Csv { path, scale_factor } => {
            let full = if path.is_absolute() {
                path.clone()
            } else {
                base_dir.join(path)
            };
            let text = fs::read_to_string(&full).map_err(|e| HarnessError::io(&full, e))?;
            let values = parse_trace_csv(&text, &full.display().to_string())?;
            Ok(values.into_iter().map(|v| v * scale_factor).collect())
        }
    }
}

/// Parses trace CSV text. The last column of each row is the rate; a first
/// row that does not parse is taken as the header.
pub fn parse_trace_csv(text: &str, origin: &str) -> Result<Vec<f64>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        let Some(field) = record.iter().next_back().filter(|f| !f.is_empty()) else {
            continue;
        };
        match field.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => out.push(v),
            Ok(v) => {
                return Err(HarnessError::Trace {
                    path: origin.to_string(),
                    line,
                    message: format!("workload {v} is negative or not finite"),
                })
            }
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(HarnessError::Trace {
                    path: origin.to_string(),
                    line,
                    message: format!("cannot parse '{field}' as a rate"),
                })
            }
        }
    }
    Ok(out)
}

/// Writes a trace as `time_s,workload` CSV.
pub fn write_trace_csv(trace: &[f64], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time_s", "workload"])?;
    for (t, v) in trace.iter().enumerate() {
        w.write_record([t.to_string(), format!("{v:.3}")])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    Daedalus {
        name: Option<String>,
        #[serde(default)]
        config: Option<ControllerConfig>,
    },
    Hpa {
        name: Option<String>,
        target_utilization: f64,
        #[serde(default)]
        eval_interval: Option<u64>,
        #[serde(default)]
        stabilization_window: Option<u64>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Static {
        name: Option<String>,
        count: usize,
    },
}

impl ControllerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ControllerSpec::Daedalus { .. } => "daedalus",
            ControllerSpec::Hpa { .. } => "hpa",
            ControllerSpec::Static { .. } => "static",
        }
    }

    pub fn name(&self) -> String {
        match self {
            ControllerSpec::Daedalus { name, .. } => name.clone().unwrap_or_else(|| "daedalus".into()),
            ControllerSpec::Hpa {
                name,
                target_utilization,
                ..
            } => name.clone().unwrap_or_else(|| format!("hpa-{target_utilization:.2}")),
            ControllerSpec::Static { name, count } => name.clone().unwrap_or_else(|| format!("static-{count}")),
        }
    }

    pub fn policy(&self) -> Option<ThresholdPolicy> {
        match self {
            ControllerSpec::Hpa {
                target_utilization,
                eval_interval,
                stabilization_window,
                tolerance,
                ..
            } => {
                let d = ThresholdPolicy::default();
                Some(ThresholdPolicy {
                    target_utilization: *target_utilization,
                    eval_interval: eval_interval.unwrap_or(d.eval_interval),
                    stabilization_window: stabilization_window.unwrap_or(d.stabilization_window),
                    tolerance: tolerance.unwrap_or(HPA_TOLERANCE),
                })
            }
            _ => None,
        }
    }

    /// Controller configuration with the cluster limits filled in.
    pub fn controller_config(&self, cluster: &ClusterSpec) -> Option<ControllerConfig> {
        match self {
            ControllerSpec::Daedalus { config, .. } => {
                let mut c = config.clone().unwrap_or_else(|| ControllerConfig {
                    recovery: crate::recovery::RecoveryConfig {
                        checkpoint_interval: cluster.checkpoint_interval,
                        ..Default::default()
                    },
                    ..Default::default()
                });
                if config.is_none() || c.max_scaleout == 0 {
                    c.max_scaleout = cluster.max_workers;
                }
                c.max_scaleout = c.max_scaleout.min(cluster.max_workers);
                Some(c)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Seconds to simulate; defaults to the trace length.
    pub duration: Option<u64>,
    /// Starting scale-out of adaptive controllers; defaults to the maximum.
    pub initial_workers: Option<usize>,
    pub cluster: ClusterSpec,
    pub workload: TraceSpec,
    pub controllers: Vec<ControllerSpec>,
    /// Directory that relative trace paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_name() -> String {
    "scenario".into()
}

impl Scenario {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| HarnessError::Scenario(e.to_string()))?;
        s.base_dir = base_dir.to_path_buf();
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Scenario::from_toml(&text, dir)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Checks the scenario and returns its trace, cut to the run duration.
    pub fn prepare(&self) -> Result<Vec<f64>, HarnessError> {
        let err = |m: String| Err(HarnessError::Scenario(m));
        if self.schema_version != SCHEMA_VERSION {
            return err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.cluster.validate()?;
        if self.controllers.is_empty() {
            return err("no controllers configured".into());
        }
        let mut names: Vec<String> = self.controllers.iter().map(|c| c.name()).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return err(format!("duplicate controller name '{}'", w[0]));
        }
        for c in &self.controllers {
            if names
                .iter()
                .any(|n| n.contains(',') || n.contains('/') || n.contains('='))
            {
                return err("controller names may not contain ',', '/' or '='".into());
            }
            match c {
                ControllerSpec::Static { count, .. } if *count == 0 || *count > self.cluster.max_workers => {
                    return err(format!("static count {count} outside 1..={}", self.cluster.max_workers));
                }
                ControllerSpec::Hpa { .. } => {
                    c.policy().expect("hpa").validate().map_err(HarnessError::Scenario)?;
                }
                ControllerSpec::Daedalus { .. } => {
                    c.controller_config(&self.cluster)
                        .expect("daedalus")
                        .validate()
                        .map_err(|e| HarnessError::Scenario(e.to_string()))?;
                }
                _ => {}
            }
        }
        if let Some(w) = self.initial_workers {
            if w == 0 || w > self.cluster.max_workers {
                return err(format!("initial_workers {w} outside 1..={}", self.cluster.max_workers));
            }
        }
        let mut trace = generate_trace(&self.workload, &self.base_dir)?;
        let duration = self.duration.unwrap_or(trace.len() as u64) as usize;
        if duration == 0 {
            return err("duration must be positive".into());
        }
        if trace.len() < duration {
            return err(format!("trace has {} s but duration is {duration} s", trace.len()));
        }
        trace.truncate(duration);
        let peak = trace.iter().cloned().fold(0.0, f64::max);
        let limit = self.cluster.nominal_capacity(self.cluster.max_workers);
        if peak > limit {
            return err(format!(
                "peak workload {peak:.0} exceeds the capacity {limit:.0} at {} workers",
                self.cluster.max_workers
            ));
        }
        Ok(trace)
    }
}

/// Seed precedence: command-line flag, then environment, then scenario file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, file: u64) -> Result<u64, HarnessError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| HarnessError::Scenario(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        None => Ok(file),
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub time_s: u64,
    pub workload: u64,
    pub throughput: u64,
    pub workers: usize,
    pub cpu_avg: f64,
    pub consumer_lag: u64,
    pub latency_p95_s: f64,
    pub decision_event: String,
}

impl MetricsRow {
    fn fields(&self) -> [String; 8] {
        [
            self.time_s.to_string(),
            self.workload.to_string(),
            self.throughput.to_string(),
            self.workers.to_string(),
            format!("{:.4}", self.cpu_avg),
            self.consumer_lag.to_string(),
            format!("{:.3}", self.latency_p95_s),
            self.decision_event.clone(),
        ]
    }
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(HarnessError::Scenario(format!("{}: unexpected header", path.display())));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        let line = r.position().map_or(0, |p| p.line());
        let bad = |col: &str| HarnessError::Trace {
            path: path.display().to_string(),
            line,
            message: format!("bad {col} value"),
        };
        macro_rules! num {
            ($i:expr, $name:expr) => {
                r.get($i).and_then(|v| v.parse().ok()).ok_or_else(|| bad($name))?
            };
        }
        rows.push(MetricsRow {
            time_s: num!(0, "time_s"),
            workload: num!(1, "workload"),
            throughput: num!(2, "throughput"),
            workers: num!(3, "workers"),
            cpu_avg: num!(4, "cpu_avg"),
            consumer_lag: num!(5, "consumer_lag"),
            latency_p95_s: num!(6, "latency_p95_s"),
            decision_event: r.get(7).unwrap_or("").to_string(),
        });
    }
    Ok(rows)
}

/// An executed rescale as seen by the harness.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionEvent {
    pub time: u64,
    pub from: usize,
    pub to: usize,
    pub reason: String,
    pub predicted_recovery: Option<f64>,
}

/// Estimated vs. true capacity at the deployed scale-out, per tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityCheck {
    pub time: u64,
    pub estimated: f64,
    pub truth: f64,
}

impl CapacityCheck {
    pub fn relative_error(&self) -> f64 {
        (self.estimated - self.truth).abs() / self.truth
    }
}

/// Everything recorded while one controller ran.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub name: String,
    pub kind: String,
    pub rows: Vec<MetricsRow>,
    pub actions: Vec<ActionEvent>,
    pub rescales: Vec<RescaleEvent>,
    pub ticks: Vec<TickReport>,
    pub capacity_checks: Vec<CapacityCheck>,
    pub conservation_violations: u64,
    pub target_recovery_time: f64,
}

enum Driver {
    Daedalus(Box<Controller>),
    Hpa(Hpa),
    Static,
}

/// Runs one controller against a fresh simulator.
pub fn run_controller(scenario: &Scenario, trace: &[f64], spec: &ControllerSpec) -> Result<RunResult, HarnessError> {
    let cluster = &scenario.cluster;
    let initial = match spec {
        ControllerSpec::Static { count, .. } => *count,
        _ => scenario.initial_workers.unwrap_or(cluster.max_workers),
    };
    let mut sim = Simulation::new(cluster.clone(), initial, scenario.seed)?;
    let mut target_rt = crate::recovery::RecoveryConfig::default().target_recovery_time;
    let (mut driver, interval) = match spec {
        ControllerSpec::Daedalus { .. } => {
            let config = spec.controller_config(cluster).expect("daedalus");
            target_rt = config.recovery.target_recovery_time;
            let interval = config.loop_interval;
            let c = Controller::new(config, initial).map_err(|e| HarnessError::Scenario(e.to_string()))?;
            (Driver::Daedalus(Box::new(c)), interval)
        }
        ControllerSpec::Hpa { .. } => {
            let policy = spec.policy().expect("hpa");
            let interval = policy.eval_interval;
            (Driver::Hpa(Hpa::new(policy, cluster.max_workers)), interval)
        }
        ControllerSpec::Static { .. } => (Driver::Static, u64::MAX),
    };

    let mut result = RunResult {
        name: spec.name(),
        kind: spec.kind().to_string(),
        rows: Vec::with_capacity(trace.len()),
        actions: Vec::new(),
        rescales: Vec::new(),
        ticks: Vec::new(),
        capacity_checks: Vec::new(),
        conservation_violations: 0,
        target_recovery_time: target_rt,
    };

    for (t, rate) in trace.iter().enumerate() {
        let rec = sim.step(*rate);
        if !rec.conserves() {
            result.conservation_violations += 1;
        }
        let mut row = MetricsRow {
            time_s: rec.time,
            workload: rec.arrivals,
            throughput: rec.processed,
            workers: rec.workers,
            // Rounded as written, so summaries recomputed from disk agree.
            cpu_avg: (rec.cpu_avg * 1e4).round() / 1e4,
            consumer_lag: rec.backlog,
            latency_p95_s: (rec.latency * 1e3).round() / 1e3,
            decision_event: String::new(),
        };
        let elapsed = t as u64 + 1;
        if interval != u64::MAX && elapsed.is_multiple_of(interval) {
            row.decision_event = match &mut driver {
                Driver::Daedalus(c) => daedalus_tick(c, &mut sim, &mut result),
                Driver::Hpa(h) => hpa_tick(h, &mut sim, &mut result)?,
                Driver::Static => String::new(),
            };
        }
        result.rows.push(row);
    }
    result.rescales = sim.events().to_vec();
    Ok(result)
}

fn daedalus_tick(c: &mut Controller, sim: &mut Simulation, result: &mut RunResult) -> String {
    let mut report = c.observe_and_plan(sim);
    if let Some(est) = report.current_capacity {
        result.capacity_checks.push(CapacityCheck {
            time: sim.now(),
            estimated: est,
            truth: sim.ground_truth_capacity(sim.workers()),
        });
    }
    c.execute(&mut report, sim);
    let event = match (&report.action, &report.decision) {
        (Some(a), _) => {
            let mut e = format!("{}:{}->{}", a.reason.as_str(), a.from, a.to);
            if a.executed {
                result.actions.push(ActionEvent {
                    time: sim.now(),
                    from: a.from,
                    to: a.to,
                    reason: a.reason.as_str().to_string(),
                    predicted_recovery: a.predicted_recovery,
                });
            } else {
                e.push_str(":failed");
            }
            e
        }
        (None, Some(d)) => d.reason.as_str().to_string(),
        (None, None) if report.skipped.is_some() => "skipped".into(),
        (None, None) => "warming-up".into(),
    };
    debug!("[{}] t={} {}", result.name, sim.now(), event);
    result.ticks.push(report);
    event
}

fn hpa_tick(hpa: &mut Hpa, sim: &mut Simulation, result: &mut RunResult) -> Result<String, HarnessError> {
    let window = hpa.policy.eval_interval as usize;
    let ready: Vec<f64> = sim
        .records()
        .rev()
        .take(window)
        .filter(|r| !r.down && r.workers == sim.workers())
        .map(|r| r.cpu_avg)
        .collect();
    if sim.is_down() || ready.is_empty() {
        return Ok(String::new());
    }
    let avg = ready.iter().sum::<f64>() / ready.len() as f64;
    let current = sim.workers();
    let d = hpa.evaluate(sim.now(), current, avg);
    if d.target_parallelism == current {
        return Ok(String::new());
    }
    sim.rescale(d.target_parallelism)?;
    debug!(
        "[{}] t={} {} -> {}",
        result.name,
        sim.now(),
        current,
        d.target_parallelism
    );
    result.actions.push(ActionEvent {
        time: sim.now(),
        from: current,
        to: d.target_parallelism,
        reason: d.reason.as_str().to_string(),
        predicted_recovery: None,
    });
    Ok(format!("{}:{}->{}", d.reason.as_str(), current, d.target_parallelism))
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Per-controller summary. Metrics that need more than the CSV are optional
/// so they survive a re-summarize from disk.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControllerSummary {
    pub name: String,
    pub kind: String,
    pub status: String,
    pub seconds: u64,
    pub avg_workers: f64,
    pub worker_seconds: f64,
    pub normalized_usage: f64,
    pub latency_mean: f64,
    pub latency_p50: f64,
    pub latency_p95: f64,
    pub latency_p99: f64,
    pub latency_max: f64,
    pub scaling_actions: u64,
    pub rt_violations: Option<u64>,
    pub capacity_error_mean: Option<f64>,
    pub capacity_within_5pct: Option<f64>,
    pub wape_mean: Option<f64>,
    pub wape_below_threshold: Option<f64>,
    pub fallback_ticks: Option<u64>,
    pub retrain_signals: Option<u64>,
    pub conservation_violations: Option<u64>,
}

fn is_action(event: &str) -> bool {
    event.contains("->") && !event.ends_with(":failed")
}

impl ControllerSummary {
    /// Metrics derivable from the CSV rows alone.
    pub fn from_rows(name: &str, kind: &str, rows: &[MetricsRow]) -> Self {
        let n = rows.len().max(1) as f64;
        let worker_seconds: f64 = rows.iter().map(|r| r.workers as f64).sum();
        let mut lat: Vec<f64> = rows.iter().map(|r| r.latency_p95_s).collect();
        lat.sort_by(|a, b| a.total_cmp(b));
        ControllerSummary {
            name: name.to_string(),
            kind: kind.to_string(),
            status: "ok".into(),
            seconds: rows.len() as u64,
            avg_workers: worker_seconds / n,
            worker_seconds,
            normalized_usage: f64::NAN,
            latency_mean: lat.iter().sum::<f64>() / n,
            latency_p50: percentile(&lat, 50.0),
            latency_p95: percentile(&lat, 95.0),
            latency_p99: percentile(&lat, 99.0),
            latency_max: lat.last().copied().unwrap_or(f64::NAN),
            scaling_actions: rows.iter().filter(|r| is_action(&r.decision_event)).count() as u64,
            ..Default::default()
        }
    }

    pub fn from_run(run: &RunResult) -> Self {
        let mut s = Self::from_rows(&run.name, &run.kind, &run.rows);
        s.rt_violations = Some(recovery_violations(run));
        s.conservation_violations = Some(run.conservation_violations);
        if run.kind == "daedalus" {
            let checks = &run.capacity_checks;
            if !checks.is_empty() {
                let errs: Vec<f64> = checks.iter().map(|c| c.relative_error()).collect();
                s.capacity_error_mean = Some(errs.iter().sum::<f64>() / errs.len() as f64);
                s.capacity_within_5pct = Some(errs.iter().filter(|e| **e <= 0.05).count() as f64 / errs.len() as f64);
            }
            let wapes: Vec<f64> = run.ticks.iter().filter_map(|t| t.wape).collect();
            if !wapes.is_empty() {
                s.wape_mean = Some(wapes.iter().sum::<f64>() / wapes.len() as f64);
                s.wape_below_threshold = Some(wapes.iter().filter(|w| **w < 0.25).count() as f64 / wapes.len() as f64);
            }
            s.fallback_ticks = Some(
                run.ticks
                    .iter()
                    .filter(|t| t.forecast_source == Some(crate::forecasting::ForecastSource::Fallback))
                    .count() as u64,
            );
            s.retrain_signals = Some(run.ticks.iter().filter(|t| t.retrain_started).count() as u64);
        }
        s
    }

    pub fn failed(name: &str, kind: &str, message: &str) -> Self {
        ControllerSummary {
            name: name.to_string(),
            kind: kind.to_string(),
            status: format!("failed: {}", message.replace(['\n', '='], " ")),
            normalized_usage: f64::NAN,
            ..Default::default()
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn to_kv(&self) -> Vec<(String, String)> {
        let p = |k: &str| format!("{}.{}", self.name, k);
        let mut kv = vec![(p("kind"), self.kind.clone()), (p("status"), self.status.clone())];
        if !self.is_ok() {
            return kv;
        }
        let f = |v: f64| format!("{v:.4}");
        kv.extend([
            (p("seconds"), self.seconds.to_string()),
            (p("avg_workers"), f(self.avg_workers)),
            (p("worker_seconds"), format!("{:.0}", self.worker_seconds)),
            (p("normalized_resource_usage"), f(self.normalized_usage)),
            (p("latency_mean_s"), f(self.latency_mean)),
            (p("latency_p50_s"), f(self.latency_p50)),
            (p("latency_p95_s"), f(self.latency_p95)),
            (p("latency_p99_s"), f(self.latency_p99)),
            (p("latency_max_s"), f(self.latency_max)),
            (p("scaling_actions"), self.scaling_actions.to_string()),
        ]);
        let opt_u = |k: &str, v: Option<u64>| v.map(|v| (p(k), v.to_string()));
        let opt_f = |k: &str, v: Option<f64>| v.map(|v| (p(k), f(v)));
        kv.extend(
            [
                opt_u("rt_target_violations", self.rt_violations),
                opt_f("capacity_error_mean", self.capacity_error_mean),
                opt_f("capacity_within_5pct", self.capacity_within_5pct),
                opt_f("wape_mean", self.wape_mean),
                opt_f("wape_below_threshold", self.wape_below_threshold),
                opt_u("fallback_ticks", self.fallback_ticks),
                opt_u("retrain_signals", self.retrain_signals),
                opt_u("conservation_violations", self.conservation_violations),
            ]
            .into_iter()
            .flatten(),
        );
        kv
    }

    fn from_kv(name: &str, kv: &BTreeMap<String, String>) -> Self {
        let get = |k: &str| kv.get(&format!("{name}.{k}")).cloned();
        let num = |k: &str| get(k).and_then(|v| v.parse::<f64>().ok());
        let int = |k: &str| get(k).and_then(|v| v.parse::<u64>().ok());
        ControllerSummary {
            name: name.to_string(),
            kind: get("kind").unwrap_or_default(),
            status: get("status").unwrap_or_else(|| "ok".into()),
            rt_violations: int("rt_target_violations"),
            capacity_error_mean: num("capacity_error_mean"),
            capacity_within_5pct: num("capacity_within_5pct"),
            wape_mean: num("wape_mean"),
            wape_below_threshold: num("wape_below_threshold"),
            fallback_ticks: int("fallback_ticks"),
            retrain_signals: int("retrain_signals"),
            conservation_violations: int("conservation_violations"),
            normalized_usage: f64::NAN,
            ..Default::default()
        }
    }
}

/// Executed rescales whose measured recovery exceeded the target, or that
/// stayed unrecovered for at least the target time.
pub fn recovery_violations(run: &RunResult) -> u64 {
    let end = run.rows.len() as u64;
    let target = run.target_recovery_time;
    run.rescales
        .iter()
        .enumerate()
        .filter(|(i, ev)| match ev.recovery {
            Some(r) => r as f64 > target,
            None => {
                let until = run.rescales.get(i + 1).map_or(end, |next| next.at);
                (until - ev.at) as f64 >= target
            }
        })
        .count() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub scenario: String,
    pub seed: u64,
    pub duration: u64,
    pub max_workers: usize,
    pub controllers: Vec<ControllerSummary>,
}

impl ExperimentSummary {
    /// Fills normalized resource usage relative to the first static
    /// controller, or to the maximum scale-out if there is none.
    pub fn normalize(&mut self) {
        let reference = self
            .controllers
            .iter()
            .find(|c| c.kind == "static" && c.is_ok())
            .map(|c| c.worker_seconds)
            .unwrap_or(self.max_workers as f64 * self.duration as f64);
        for c in &mut self.controllers {
            c.normalized_usage = if c.is_ok() && reference > 0.0 {
                c.worker_seconds / reference
            } else {
                f64::NAN
            };
        }
    }

    pub fn any_failed(&self) -> bool {
        self.controllers.iter().any(|c| !c.is_ok())
    }

    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("schema_version".to_string(), SCHEMA_VERSION.to_string()),
            ("scenario".to_string(), self.scenario.clone()),
            ("seed".to_string(), self.seed.to_string()),
            ("duration_s".to_string(), self.duration.to_string()),
            ("max_workers".to_string(), self.max_workers.to_string()),
            (
                "controllers".to_string(),
                self.controllers
                    .iter()
                    .map(|c| c.name.as_str())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ];
        for c in &self.controllers {
            kv.extend(c.to_kv());
        }
        kv
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment: {}", self.scenario);
        let _ = writeln!(
            out,
            "seed: {}  duration: {} s  max workers: {}",
            self.seed, self.duration, self.max_workers
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7} {:>8} {:>7}",
            "controller",
            "workers",
            "usage",
            "lat_avg",
            "lat_p50",
            "lat_p95",
            "lat_p99",
            "lat_max",
            "actions",
            "rt_viol",
            "cap_err",
            "wape"
        );
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        for c in &self.controllers {
            if !c.is_ok() {
                let _ = writeln!(out, "{:<16} {}", c.name, c.status);
                continue;
            }
            let _ = writeln!(
                out,
                "{:<16} {:>8.2} {:>9.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>7} {:>7} {:>8} {:>7}",
                c.name,
                c.avg_workers,
                c.normalized_usage,
                c.latency_mean,
                c.latency_p50,
                c.latency_p95,
                c.latency_p99,
                c.latency_max,
                c.scaling_actions,
                c.rt_violations.map_or("-".into(), |v| v.to_string()),
                opt(c.capacity_error_mean),
                opt(c.wape_mean),
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{KV_MARKER}");
        for (k, v) in self.key_values() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Parses the key=value block of a rendered summary.
    pub fn parse_key_values(text: &str) -> BTreeMap<String, String> {
        text.lines()
            .skip_while(|l| l.trim() != KV_MARKER)
            .skip(1)
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
}

/// Outcome of a full experiment.
pub struct Experiment {
    pub summary: ExperimentSummary,
    pub runs: Vec<Result<RunResult, String>>,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "controller panicked".into())
}

/// Runs every controller of `scenario` concurrently, each on its own
/// simulator. Fails only for scenario problems; a crashing controller is
/// reported as failed in the summary.
pub fn run_experiment(scenario: &Scenario, options: &RunOptions) -> Result<Experiment, HarnessError> {
    let mut scenario = scenario.clone();
    if let Some(seed) = options.seed {
        scenario.seed = seed;
    }
    let trace = scenario.prepare()?;
    info!(
        "running '{}' ({} s, seed {}) with {} controllers",
        scenario.name,
        trace.len(),
        scenario.seed,
        scenario.controllers.len()
    );
    let runs: Vec<Result<RunResult, String>> = thread::scope(|scope| {
        let handles: Vec<_> = scenario
            .controllers
            .iter()
            .map(|spec| {
                let (scenario, trace) = (&scenario, &trace);
                scope.spawn(move || {
                    panic::catch_unwind(AssertUnwindSafe(|| run_controller(scenario, trace, spec)))
                        .map_err(panic_message)
                        .and_then(|r| r.map_err(|e| e.to_string()))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| Err(panic_message(p))))
            .collect()
    });
    let controllers = scenario
        .controllers
        .iter()
        .zip(&runs)
        .map(|(spec, run)| match run {
            Ok(r) => ControllerSummary::from_run(r),
            Err(msg) => ControllerSummary::failed(&spec.name(), spec.kind(), msg),
        })
        .collect();
    let mut summary = ExperimentSummary {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        duration: trace.len() as u64,
        max_workers: scenario.cluster.max_workers,
        controllers,
    };
    summary.normalize();
    Ok(Experiment { summary, runs })
}

impl Experiment {
    /// Writes one CSV per successful controller and the summary file.
    pub fn write(&self, out_dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
        for run in self.runs.iter().flatten() {
            write_metrics_csv(&run.rows, &out_dir.join(format!("{}.csv", run.name)))?;
        }
        let path = out_dir.join(SUMMARY_FILE);
        fs::write(&path, self.summary.render()).map_err(|e| HarnessError::io(&path, e))
    }
}

/// Re-summarizes a run directory from its CSVs. Metrics that cannot be
/// derived from CSVs are carried over from an existing summary file.
pub fn report(run_dir: &Path) -> Result<ExperimentSummary, HarnessError> {
    let summary_path = run_dir.join(SUMMARY_FILE);
    let previous = fs::read_to_string(&summary_path)
        .map(|t| ExperimentSummary::parse_key_values(&t))
        .unwrap_or_default();
    let mut names: Vec<String> = previous
        .get("controllers")
        .map(|c| c.split(',').filter(|s| !s.is_empty()).map(String::from).collect())
        .unwrap_or_default();
    if names.is_empty() {
        let entries = fs::read_dir(run_dir).map_err(|e| HarnessError::io(run_dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| HarnessError::io(run_dir, e))?.path();
            if path.extension().is_some_and(|e| e == "csv") {
                if let Some(stem) = path.file_stem() {
                    names.push(stem.to_string_lossy().into_owned());
                }
            }
        }
        names.sort();
    }
    if names.is_empty() {
        return Err(HarnessError::Scenario(format!(
            "no metrics CSVs in {}",
            run_dir.display()
        )));
    }
    let mut duration = 0;
    let mut max_workers = previous.get("max_workers").and_then(|v| v.parse().ok()).unwrap_or(0);
    let mut controllers = Vec::new();
    for name in names {
        let carried = ControllerSummary::from_kv(&name, &previous);
        let csv = run_dir.join(format!("{name}.csv"));
        if !carried.is_ok() && !csv.exists() {
            controllers.push(carried);
            continue;
        }
        let rows = read_metrics_csv(&csv)?;
        duration = duration.max(rows.len() as u64);
        max_workers = max_workers.max(rows.iter().map(|r| r.workers).max().unwrap_or(0));
        let kind = if carried.kind.is_empty() {
            if name.starts_with("static") {
                "static"
            } else {
                "unknown"
            }
            .to_string()
        } else {
            carried.kind.clone()
        };
        let fresh = ControllerSummary::from_rows(&name, &kind, &rows);
        controllers.push(ControllerSummary {
            rt_violations: carried.rt_violations,
            capacity_error_mean: carried.capacity_error_mean,
            capacity_within_5pct: carried.capacity_within_5pct,
            wape_mean: carried.wape_mean,
            wape_below_threshold: carried.wape_below_threshold,
            fallback_ticks: carried.fallback_ticks,
            retrain_signals: carried.retrain_signals,
            conservation_violations: carried.conservation_violations,
            ..fresh
        });
    }
    let mut summary = ExperimentSummary {
        scenario: previous.get("scenario").cloned().unwrap_or_else(default_name),
        seed: previous.get("seed").and_then(|v| v.parse().ok()).unwrap_or(0),
        duration,
        max_workers,
        controllers,
    };
    summary.normalize();
    fs::write(&summary_path, summary.render()).map_err(|e| HarnessError::io(&summary_path, e))?;
    Ok(summary)
}

/// Loads a standalone trace spec (a TOML table with a `kind` key).
pub fn load_trace_spec(path: &Path) -> Result<TraceSpec, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    toml::from_str(&text).map_err(|e| HarnessError::Scenario(e.to_string()))
}
