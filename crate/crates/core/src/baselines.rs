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

//! Reference autoscalers: a fixed scale-out and a CPU-threshold autoscaler
//! with the usual Kubernetes semantics.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::controller::{DecisionReason, ScalingDecision};

/// Ratio band around 1.0 inside which the threshold autoscaler does nothing.
pub const HPA_TOLERANCE: f64 = 0.1;

pub fn static_decide(fixed: usize) -> ScalingDecision {
    ScalingDecision {
        target_parallelism: fixed,
        reason: DecisionReason::NoChange,
        predicted_recovery: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdPolicy {
    pub target_utilization: f64,
    /// Seconds between evaluations.
    pub eval_interval: u64,
    /// Scale-ins use the highest recommendation within this many seconds.
    pub stabilization_window: u64,
    pub tolerance: f64,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy {
            target_utilization: 0.8,
            eval_interval: 15,
            stabilization_window: 300,
            tolerance: HPA_TOLERANCE,
        }
    }
}

impl ThresholdPolicy {
    pub fn with_target(target_utilization: f64) -> Self {
        ThresholdPolicy {
            target_utilization,
            ..ThresholdPolicy::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.target_utilization > 0.0 && self.target_utilization < 1.0) {
            return Err(format!("target_utilization {} outside (0, 1)", self.target_utilization));
        }
        if self.eval_interval == 0 {
            return Err("eval_interval must be positive".into());
        }
        if !(0.0..1.0).contains(&self.tolerance) {
            return Err("tolerance must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// Raw recommendation: `ceil(current × avg_cpu / target)`, or `current`
/// while the ratio stays within the tolerance band.
pub fn hpa_decide(current: usize, avg_cpu_ready_workers: f64, max: usize, policy: &ThresholdPolicy) -> usize {
    let ratio = avg_cpu_ready_workers / policy.target_utilization;
    if (ratio - 1.0).abs() <= policy.tolerance {
        return current;
    }
    let desired = (current as f64 * ratio).ceil() as usize;
    desired.clamp(1, max)
}

/// Threshold autoscaler with its scale-in stabilization history.
#[derive(Debug, Clone, PartialEq)]
pub struct Hpa {
    pub policy: ThresholdPolicy,
    pub max: usize,
    recommendations: VecDeque<(u64, usize)>,
}

impl Hpa {
    pub fn new(policy: ThresholdPolicy, max: usize) -> Self {
        Hpa {
            policy,
            max,
            recommendations: VecDeque::new(),
        }
    }

    /// One evaluation at time `now`. Scale-outs apply at once; scale-ins go
    /// no lower than the highest recommendation inside the window.
    pub fn evaluate(&mut self, now: u64, current: usize, avg_cpu_ready_workers: f64) -> ScalingDecision {
        let desired = hpa_decide(current, avg_cpu_ready_workers, self.max, &self.policy);
        self.recommendations.push_back((now, desired));
        let window = self.policy.stabilization_window;
        while let Some(&(t, _)) = self.recommendations.front() {
            if t + window <= now {
                self.recommendations.pop_front();
            } else {
                break;
            }
        }
        let (target, reason) = if desired > current {
            (desired, DecisionReason::ScaleOut)
        } else {
            let stabilized = self.recommendations.iter().map(|(_, d)| *d).max().unwrap_or(desired);
            if stabilized < current {
                (stabilized, DecisionReason::ScaleIn)
            } else {
                (current, DecisionReason::NoChange)
            }
        };
        ScalingDecision {
            target_parallelism: target,
            reason,
            predicted_recovery: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn static_is_constant() {
        assert_eq!(static_decide(12).target_parallelism, 12);
        assert_eq!(static_decide(1).target_parallelism, 1);
        assert_eq!(static_decide(7), static_decide(7));
    }

    #[test]
    fn formula_examples() {
        let p = ThresholdPolicy::with_target(0.8);
        assert_eq!(hpa_decide(4, 0.9, 16, &p), 5);
        assert_eq!(hpa_decide(4, 0.8, 16, &p), 4);
        // Inside the 10% band.
        assert_eq!(hpa_decide(4, 0.86, 16, &p), 4);
        assert_eq!(hpa_decide(4, 0.2, 16, &p), 1);
        assert_eq!(hpa_decide(10, 1.0, 12, &p), 12);
    }

    #[test]
    fn stabilization_window_blocks_scale_in() {
        let mut hpa = Hpa::new(ThresholdPolicy::with_target(0.8), 16);
        assert_eq!(hpa.evaluate(0, 8, 0.8).target_parallelism, 8);
        let d = hpa.evaluate(200, 8, 0.4);
        assert_eq!((d.target_parallelism, d.reason), (8, DecisionReason::NoChange));
        // The equilibrium recommendation has left the window.
        let d = hpa.evaluate(300, 8, 0.4);
        assert_eq!((d.target_parallelism, d.reason), (4, DecisionReason::ScaleIn));
    }

    #[test]
    fn scale_out_is_immediate() {
        let mut hpa = Hpa::new(ThresholdPolicy::with_target(0.8), 16);
        hpa.evaluate(0, 4, 0.2);
        assert_eq!(hpa.evaluate(15, 4, 1.0).target_parallelism, 5);
    }

    proptest! {
        #[test]
        fn never_scales_in_below_window_max(
            cpus in prop::collection::vec(0.0f64..1.0, 1..100),
            current in 1usize..16,
        ) {
            let mut hpa = Hpa::new(ThresholdPolicy::with_target(0.8), 16);
            let mut seen: Vec<(u64, usize)> = Vec::new();
            for (k, cpu) in cpus.iter().enumerate() {
                let now = 15 * k as u64;
                let raw = hpa_decide(current, *cpu, 16, &hpa.policy);
                seen.push((now, raw));
                let d = hpa.evaluate(now, current, *cpu);
                if d.target_parallelism < current {
                    let window_max = seen.iter().filter(|(t, _)| t + 300 > now).map(|(_, d)| *d).max().unwrap();
                    prop_assert_eq!(d.target_parallelism, window_max);
                }
                prop_assert!((1..=16).contains(&d.target_parallelism));
            }
        }
    }
}
