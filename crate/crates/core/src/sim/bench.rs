//! Latency measurement over randomized scenes.

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SceneSpec, StressScene};
use super::log::{RunStatus, TimingStats};
use super::run::run_closed_loop;
use crate::error::Result;

/// Per-control-step latency over a batch of closed-loop runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub scenes: usize,
    pub parallel: bool,
    /// Filter update, scenario generation and every mode solve of one
    /// control step.
    pub step: TimingStats,
    pub filter: TimingStats,
    pub scenarios: TimingStats,
    pub control: TimingStats,
    pub mean_horizon: f64,
    pub max_scenarios: usize,
    pub incidents: usize,
}

/// Runs `scenes` stress scenes with three targets each, seeded
/// `seed, seed + 1, …`, on top of the parameters of `base`.
pub fn bench(base: &ExperimentConfig, seed: u64, scenes: usize) -> Result<BenchReport> {
    let mut total = Vec::new();
    let mut filter = Vec::new();
    let mut scen = Vec::new();
    let mut control = Vec::new();
    let mut horizons = 0usize;
    let mut samples = 0usize;
    let mut max_scenarios = 0;
    let mut incidents = 0;
    for i in 0..scenes as u64 {
        let cfg = ExperimentConfig {
            name: format!("bench-{}", seed + i),
            seed: seed + i,
            scene: SceneSpec::Stress(StressScene { targets: Some(3) }),
            ..base.clone()
        };
        let out = run_closed_loop(&cfg)?;
        if out.summary.status != RunStatus::Completed {
            incidents += 1;
        }
        for t in &out.timings {
            total.push(t.total_ms);
            filter.push(t.filter_ms);
            scen.push(t.scenario_ms);
            control.push(t.control_ms);
        }
        for s in &out.steps {
            horizons += s.horizon;
            samples += 1;
            max_scenarios = max_scenarios.max(s.scenarios.len());
        }
    }
    Ok(BenchReport {
        seed,
        scenes,
        parallel: crate::par::is_parallel(),
        step: TimingStats::from_samples(&total),
        filter: TimingStats::from_samples(&filter),
        scenarios: TimingStats::from_samples(&scen),
        control: TimingStats::from_samples(&control),
        mean_horizon: if samples > 0 { horizons as f64 / samples as f64 } else { 0.0 },
        max_scenarios,
        incidents,
    })
}
