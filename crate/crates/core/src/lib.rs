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

//! Self-adaptive horizontal autoscaling for stream processing jobs.
//!
//! The crate is split along the control loop:
//!
//! * [`model`] estimates what each scale-out can sustain from per-worker
//!   CPU and throughput samples, accounting for data skew.
//! * [`forecasting`] predicts the next 15 minutes of workload and decides
//!   when the forecast is trustworthy.
//! * [`recovery`] predicts how long a restart takes to catch up and measures
//!   how long it actually took.
//! * [`controller`] ties them together in a monitor / analyze / plan /
//!   execute loop.
//! * [`simulator`], [`baselines`] and [`harness`] provide a deterministic
//!   cluster model, reference autoscalers and an experiment runner.
//!
//! ```
//! use dspscale::controller::{Controller, ControllerConfig};
//! use dspscale::simulator::{ClusterSpec, Simulation};
//!
//! let spec = ClusterSpec { max_workers: 8, ..ClusterSpec::default() };
//! let mut sim = Simulation::new(spec, 8, 42).unwrap();
//! let config = ControllerConfig { max_scaleout: 8, ..ControllerConfig::default() };
//! let mut controller = Controller::new(config, 8).unwrap();
//! for t in 1..=1_800u64 {
//!     sim.step(6_000.0);
//!     if t % 60 == 0 {
//!         controller.tick(&mut sim);
//!     }
//! }
//! // 6 000 tuples/s need far fewer than eight 5 000 tuples/s workers.
//! assert!(sim.workers() < 8);
//! ```

// `!(a > b)` is how NaN gets rejected along with the ordinary failures.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod controller;
pub mod forecasting;
pub mod harness;
pub mod model;
pub mod recovery;
pub mod simulator;

pub use controller::{decide, Controller, ControllerConfig, DecisionInput, DecisionReason, ScalingDecision};
pub use forecasting::{Forecast, Forecaster, HoltSeasonal, WorkloadSeries};
pub use model::{CapacityTable, MetricSample, RegressionState, WorkerId};
pub use recovery::{AnomalyState, RecoveryConfig};
pub use simulator::{ClusterSpec, KeyWeights, Simulation};

/// The guide's code listings, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/capacity.md")]
    mod capacity {}
    #[doc = include_str!("../../../book/src/forecasting.md")]
    mod forecasting {}
    #[doc = include_str!("../../../book/src/recovery.md")]
    mod recovery {}
    #[doc = include_str!("../../../book/src/decisions.md")]
    mod decisions {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
