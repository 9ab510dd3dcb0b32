//! Per-step records, the run summary and their serializations.
//!
//! `steps.jsonl` holds one [`StepLog`] per control step. Wall-clock timings
//! never enter it, so equal configs and seeds give byte-identical files;
//! they are reported in `summary.json` only.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imm::PredictionFan;
use crate::mpc::{ControlDecision, ShiftCheck};
use crate::scenario::Scenario;
use crate::types::{CommonState, Lane, Vehicle};

use super::run::PredictionLog;

/// Cost and status of one control mode at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeLog {
    pub mode: String,
    pub target_lane: Lane,
    pub feasible: bool,
    pub deactivated: bool,
    /// Optimal cost, or the sentinel when infeasible or deactivated.
    pub cost: f64,
    pub iterations: usize,
    pub active_constraints: usize,
}

/// One retained scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioLog {
    /// Policy mode of every target, e.g. `"VT-2"`.
    pub assignment: BTreeMap<u32, String>,
    pub probability: f64,
}

impl ScenarioLog {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self { assignment: s.assignment.iter().map(|(id, m)| (*id, m.to_string())).collect(), probability: s.probability }
    }
}

/// Fused prediction of one target as `(p_lon, p_lat)` per control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanLog {
    pub id: u32,
    pub mu: [f64; 6],
    pub fused: Vec<[f64; 2]>,
}

impl FanLog {
    pub fn from_fan(f: &PredictionFan) -> Self {
        Self { id: f.id, mu: f.mu, fused: f.fused.iter().map(|s| [s.p_lon, s.p_lat]).collect() }
    }
}

/// Feasibility-related flags of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepFlags {
    /// No mode was feasible and the emergency brake was applied.
    pub emergency: bool,
    /// Result of the shifted-plan re-check, when enabled and available.
    pub shift_check: Option<ShiftCheck>,
    /// Predicted trajectories whose no-collision projection failed.
    pub projection_flags: usize,
}

/// Everything recorded at one control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub time: f64,
    pub ego: CommonState,
    pub lane: Lane,
    pub input: [f64; 2],
    pub mode: Option<String>,
    pub target_lane: Option<Lane>,
    pub horizon: usize,
    pub modes: Vec<ModeLog>,
    pub scenarios: Vec<ScenarioLog>,
    pub predictions: Vec<FanLog>,
    /// Centre-to-centre distance to the nearest vehicle ahead in the ego's
    /// lane, if any.
    pub lead_gap: Option<f64>,
    pub flags: StepFlags,
}

impl StepLog {
    pub(crate) fn modes_of(decision: &ControlDecision, sentinel: f64) -> Vec<ModeLog> {
        decision
            .solutions
            .iter()
            .map(|s| ModeLog {
                mode: s.mode.to_string(),
                target_lane: s.target_lane,
                feasible: s.feasible,
                deactivated: s.deactivated,
                cost: s.logged_cost(sentinel),
                iterations: s.iterations,
                active_constraints: s.active,
            })
            .collect()
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Collision { id: u32, time: f64 },
    /// No mode was feasible after a feasible step.
    Infeasible { time: f64 },
}

/// State of every vehicle when a run aborted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forensics {
    pub time: f64,
    pub ego: Vehicle,
    pub targets: Vec<Vehicle>,
    pub last_input: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSwitch {
    pub time: f64,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneChange {
    pub time: f64,
    pub from: Lane,
    pub to: Lane,
}

/// Result of the shifted-plan re-checks over a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub checked: usize,
    pub passed: usize,
    pub max_violation: f64,
}

/// Latency statistics in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl TimingStats {
    pub fn from_samples(ms: &[f64]) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        let mut v = ms.to_vec();
        v.sort_by(f64::total_cmp);
        let pct = |q: f64| v[((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
        Self { samples: v.len(), mean_ms: v.iter().sum::<f64>() / v.len() as f64, p50_ms: pct(0.5), p95_ms: pct(0.95), max_ms: v[v.len() - 1] }
    }
}

/// Wall-clock cost of one control step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepTiming {
    /// Filter bank update of the control tick.
    pub filter_ms: f64,
    pub scenario_ms: f64,
    pub control_ms: f64,
    pub total_ms: f64,
}

/// Exit summary written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub status: RunStatus,
    pub simulated_time: f64,
    pub control_steps: usize,
    pub final_ego: CommonState,
    pub final_lane: Lane,
    pub mode_switches: Vec<ModeSwitch>,
    pub lane_changes: Vec<LaneChange>,
    /// The first control step found a feasible mode.
    pub initially_feasible: bool,
    pub emergency_steps: usize,
    /// Smallest same-lane gap minus the bare safety distance over all filter
    /// ticks; `None` if no vehicle was ever ahead in the ego's lane.
    pub min_gap_margin: Option<f64>,
    /// Smallest same-lane gap minus the time-headway distance over all
    /// control steps.
    pub min_headway_margin: Option<f64>,
    pub shift_checks: ShiftSummary,
    pub step_time: TimingStats,
    pub solve_time: TimingStats,
    pub forensics: Option<Forensics>,
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(mut w: W, steps: &[StepLog]) -> Result<()> {
    for s in steps {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `steps.jsonl` stream back.
pub fn read_jsonl(text: &str) -> Result<Vec<StepLog>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Flattened per-step scalars; the per-mode costs get one column per lane
/// (`cost_lane_1..3`, the lane the mode steers to), empty when that mode
/// was not available.
#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    step: usize,
    time: f64,
    p_lon: f64,
    v_lon: f64,
    a_lon: f64,
    p_lat: f64,
    v_lat: f64,
    a_lat: f64,
    lane: u8,
    u_lon: f64,
    u_lat: f64,
    mode: &'a str,
    target_lane: Option<u8>,
    horizon: usize,
    cost_lane_1: Option<f64>,
    cost_lane_2: Option<f64>,
    cost_lane_3: Option<f64>,
    scenarios: usize,
    lead_gap: Option<f64>,
    emergency: bool,
    shift_passed: Option<bool>,
}

pub fn write_csv<W: Write>(w: W, steps: &[StepLog]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in steps {
        let cost = |lane: u8| s.modes.iter().find(|m| m.target_lane.index() == lane).map(|m| m.cost);
        out.serialize(CsvRow {
            step: s.step,
            time: s.time,
            p_lon: s.ego.p_lon,
            v_lon: s.ego.v_lon,
            a_lon: s.ego.a_lon,
            p_lat: s.ego.p_lat,
            v_lat: s.ego.v_lat,
            a_lat: s.ego.a_lat,
            lane: s.lane.index(),
            u_lon: s.input[0],
            u_lat: s.input[1],
            mode: s.mode.as_deref().unwrap_or("emergency"),
            target_lane: s.target_lane.map(|l| l.index()),
            horizon: s.horizon,
            cost_lane_1: cost(1),
            cost_lane_2: cost(2),
            cost_lane_3: cost(3),
            scenarios: s.scenarios.len(),
            lead_gap: s.lead_gap,
            emergency: s.flags.emergency,
            shift_passed: s.flags.shift_check.map(|c| c.passed),
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Writes one [`PredictionLog`] per line.
pub fn write_predictions_jsonl<W: Write>(mut w: W, logs: &[PredictionLog]) -> Result<()> {
    for l in logs {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// One fused prediction sample with the mode probabilities of its vehicle.
#[derive(Debug, Serialize)]
struct PredictionRow {
    time: f64,
    id: u32,
    k: usize,
    p_lon: f64,
    p_lat: f64,
    mu_vt_1: f64,
    mu_vt_2: f64,
    mu_vt_3: f64,
    mu_dk_1: f64,
    mu_dk_2: f64,
    mu_dk_3: f64,
    scenarios: usize,
}

/// Flattens the fused predictions to one row per vehicle and horizon step.
pub fn write_predictions_csv<W: Write>(w: W, logs: &[PredictionLog]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for l in logs {
        for f in &l.fans {
            let mu = f.mu;
            for (k, s) in f.fused.iter().enumerate() {
                out.serialize(PredictionRow {
                    time: l.time,
                    id: f.id,
                    k,
                    p_lon: s.p_lon,
                    p_lat: s.p_lat,
                    mu_vt_1: mu[0],
                    mu_vt_2: mu[1],
                    mu_vt_3: mu[2],
                    mu_dk_1: mu[3],
                    mu_dk_2: mu[4],
                    mu_dk_3: mu[5],
                    scenarios: l.scenarios.len(),
                })?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
