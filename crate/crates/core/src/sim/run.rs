//! The closed-loop driver: filter every tick, plan every control tick,
//! apply the first input, move the traffic, check for collisions.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SceneSpec, SCHEMA_VERSION};
use super::log::{
    FanLog, Forensics, LaneChange, ModeSwitch, RunStatus, ScenarioLog, ShiftSummary, StepFlags, StepLog, StepTiming,
    Summary, TimingStats,
};
use super::scenes::draw_stress_scene;
use super::world::World;
use crate::error::{Error, Result};
use crate::imm::{gap_requirement, PredictionFan, Tracker};
use crate::mpc::Controller;
use crate::policy::synthesize_gains;
use crate::scenario::{prune_generate, Scenario};
use crate::types::{footprints_overlap, jerk_step, CommonState, SceneSnapshot, Vehicle};

/// Logs, summary and wall-clock timings of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub steps: Vec<StepLog>,
    pub summary: Summary,
    pub timings: Vec<StepTiming>,
}

/// Builds the traffic and the initial ego vehicle of an experiment.
pub fn build_world(cfg: &ExperimentConfig) -> Result<(World, Vehicle)> {
    match &cfg.scene {
        SceneSpec::Synthetic(s) => World::synthetic(s, cfg.filter_period),
        SceneSpec::Dataset(d) => World::replay(d, cfg.filter_period),
        SceneSpec::Stress(s) => World::synthetic(&draw_stress_scene(cfg, s, cfg.seed)?, cfg.filter_period),
    }
}

/// Scenarios of the current fans. When even the most likely joint
/// assignment falls below the threshold, that assignment alone is kept.
pub fn scenarios_for(fans: &[PredictionFan], threshold: f64, cap: usize) -> Result<Vec<Scenario>> {
    if fans.is_empty() {
        return Ok(Vec::new());
    }
    match prune_generate(fans, threshold, cap) {
        Err(Error::AllBelowThreshold(_)) => {
            let best: f64 = fans.iter().map(|f| f.mu.iter().copied().fold(0.0, f64::max)).product();
            prune_generate(fans, best * (1.0 - 1e-9), cap)
        }
        other => other,
    }
}

/// Adds measurement noise to the target states seen by the filters.
struct Sensor {
    rng: ChaCha8Rng,
    noise: Option<[Normal<f64>; 6]>,
}

impl Sensor {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let noise = match cfg.measurement_noise {
            None => None,
            Some(sd) => {
                let mk = |s: f64| Normal::new(0.0, s).map_err(|e| Error::Config(e.to_string()));
                Some([mk(sd[0])?, mk(sd[1])?, mk(sd[2])?, mk(sd[3])?, mk(sd[4])?, mk(sd[5])?])
            }
        };
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_5e45), noise })
    }

    fn measure(&mut self, v: &Vehicle) -> Vehicle {
        let Some(n) = &self.noise else { return *v };
        let s = v.state;
        let mut d = [0.0; 6];
        for (k, dist) in n.iter().enumerate() {
            d[k] = dist.sample(&mut self.rng);
        }
        let state = CommonState::new(s.p_lon + d[0], (s.v_lon + d[1]).max(0.0), s.a_lon + d[2], s.p_lat + d[3], s.v_lat + d[4], s.a_lat + d[5]);
        Vehicle { state, ..*v }
    }
}

/// Centre distance to the nearest target ahead in the ego's lane, and the
/// required bare gap to it.
fn lead_gap(ego: &Vehicle, targets: &[Vehicle], cfg: &ExperimentConfig) -> Option<(f64, f64)> {
    let lane = cfg.lanes.lane_of_clamped(ego.state.p_lat);
    targets
        .iter()
        .filter(|t| t.state.p_lon > ego.state.p_lon && cfg.lanes.lane_of_clamped(t.state.p_lat) == lane)
        .min_by(|a, b| a.state.p_lon.total_cmp(&b.state.p_lon))
        .map(|t| (t.state.p_lon - ego.state.p_lon, gap_requirement(ego.params.length, t.params.length, cfg.controller.gap_margin)))
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn min_opt(a: Option<f64>, b: f64) -> Option<f64> {
    Some(a.map_or(b, |x| x.min(b)))
}

/// Runs one closed-loop experiment.
pub fn run_closed_loop(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let dt = cfg.filter_period;
    let ratio = cfg.control_ratio()?;
    let gains = synthesize_gains(&cfg.gains, dt)?;
    let (mut world, mut ego) = build_world(cfg)?;
    cfg.lanes.lane_of(ego.state.p_lat)?;
    let mut tracker = Tracker::new(cfg.imm.clone(), gains, cfg.lanes, dt, ratio, cfg.controller.horizon)?;
    let mut controller = Controller::new(cfg.controller.clone())?;
    let mut sensor = Sensor::new(cfg)?;
    let n_ticks = (cfg.duration / dt).round() as usize;

    let mut steps: Vec<StepLog> = Vec::new();
    let mut timings: Vec<StepTiming> = Vec::new();
    let mut input = [0.0, 0.0];
    let mut status = RunStatus::Completed;
    let mut forensics = None;
    let mut min_gap_margin: Option<f64> = None;
    let mut min_headway_margin: Option<f64> = None;
    let mut shift = ShiftSummary::default();
    let mut ever_feasible = false;
    let mut initially_feasible = true;
    let mut emergency_steps = 0;
    let mut mode_switches = Vec::new();
    let mut lane_changes = Vec::new();
    let mut last_mode: Option<String> = None;
    let mut last_lane = cfg.lanes.lane_of_clamped(ego.state.p_lat);
    let mut time = 0.0;

    for tick in 0..=n_ticks {
        time = tick as f64 * dt;
        let targets = world.targets();
        if let Some(hit) = targets.iter().find(|t| footprints_overlap(&ego, t)) {
            status = RunStatus::Collision { id: hit.params.id, time };
            forensics = Some(Forensics { time, ego, targets: targets.clone(), last_input: input });
            break;
        }
        if let Some((gap, dd)) = lead_gap(&ego, &targets, cfg) {
            min_gap_margin = min_opt(min_gap_margin, gap - dd);
        }
        let lane = cfg.lanes.lane_of_clamped(ego.state.p_lat);
        if lane != last_lane {
            lane_changes.push(LaneChange { time, from: last_lane, to: lane });
            last_lane = lane;
        }
        if tick == n_ticks {
            break;
        }

        let measured: Vec<Vehicle> = targets.iter().map(|t| sensor.measure(t)).collect();
        let step_start = Instant::now();
        tracker.step(&SceneSnapshot::new(time, ego, measured, cfg.lanes)?)?;
        let filter_ms = ms(step_start);

        if tick % ratio == 0 {
            let t0 = Instant::now();
            let fans = tracker.fans();
            let scenarios = scenarios_for(&fans, cfg.scenario.threshold, cfg.scenario.cap)?;
            let scenario_ms = ms(t0);
            let t1 = Instant::now();
            let scene = SceneSnapshot::new(time, ego, targets.clone(), cfg.lanes)?;
            let decision = controller.step(&scene, &scenarios, cfg.verify_feasibility)?;
            let control_ms = ms(t1);
            timings.push(StepTiming { filter_ms, scenario_ms, control_ms, total_ms: ms(step_start) });
            input = decision.input;

            if let Some(c) = decision.shift {
                shift.checked += 1;
                shift.passed += c.passed as usize;
                shift.max_violation = shift.max_violation.max(c.max_violation);
            }
            let gap = lead_gap(&ego, &targets, cfg);
            if let Some((g, dd)) = gap {
                min_headway_margin = min_opt(min_headway_margin, g - (cfg.controller.tau * ego.state.v_lon + dd));
            }
            let mode = decision.mode.map(|m| m.to_string());
            if let (Some(prev), Some(now)) = (&last_mode, &mode) {
                if prev != now {
                    mode_switches.push(ModeSwitch { time, from: prev.clone(), to: now.clone() });
                }
            }
            if mode.is_some() {
                last_mode = mode.clone();
            }
            steps.push(StepLog {
                step: steps.len(),
                time,
                ego: ego.state,
                lane,
                input,
                mode,
                target_lane: decision.target_lane,
                horizon: decision.horizon,
                modes: StepLog::modes_of(&decision, cfg.controller.sentinel_cost),
                scenarios: scenarios.iter().map(ScenarioLog::from_scenario).collect(),
                predictions: fans.iter().map(FanLog::from_fan).collect(),
                lead_gap: gap.map(|g| g.0),
                flags: StepFlags { emergency: decision.emergency, shift_check: decision.shift, projection_flags: tracker.flagged().len() },
            });
            if decision.emergency {
                emergency_steps += 1;
                if ever_feasible {
                    status = RunStatus::Infeasible { time };
                    forensics = Some(Forensics { time, ego, targets: targets.clone(), last_input: input });
                    break;
                }
                if steps.len() == 1 {
                    initially_feasible = false;
                }
            } else {
                ever_feasible = true;
            }
        }

        world.advance(time, &ego, &gains, &cfg.lanes)?;
        ego.state = jerk_step(&ego.state, input, dt);
        if ego.state.v_lon < 0.0 {
            ego.state.v_lon = 0.0;
            ego.state.a_lon = ego.state.a_lon.max(0.0);
        }
    }

    let step_ms: Vec<f64> = timings.iter().map(|t| t.total_ms).collect();
    let solve_ms: Vec<f64> = timings.iter().map(|t| t.control_ms).collect();
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        name: cfg.name.clone(),
        seed: cfg.seed,
        status,
        simulated_time: time,
        control_steps: steps.len(),
        final_ego: ego.state,
        final_lane: cfg.lanes.lane_of_clamped(ego.state.p_lat),
        mode_switches,
        lane_changes,
        initially_feasible,
        emergency_steps,
        min_gap_margin,
        min_headway_margin,
        shift_checks: shift,
        step_time: TimingStats::from_samples(&step_ms),
        solve_time: TimingStats::from_samples(&solve_ms),
        forensics,
    };
    Ok(RunOutput { steps, summary, timings })
}

/// Prediction products at one control instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLog {
    pub time: f64,
    pub fans: Vec<PredictionFan>,
    pub scenarios: Vec<ScenarioLog>,
}

/// Filter-only run over the scene: the ego follows its recorded track when
/// replaying, and drives at constant velocity otherwise.
pub fn run_prediction(cfg: &ExperimentConfig) -> Result<Vec<PredictionLog>> {
    cfg.validate()?;
    let dt = cfg.filter_period;
    let ratio = cfg.control_ratio()?;
    let gains = synthesize_gains(&cfg.gains, dt)?;
    let (mut world, mut ego) = build_world(cfg)?;
    let recorded = match &cfg.scene {
        SceneSpec::Dataset(d) => Some((super::tracks::ingest_tracks(&d.path, &d.transform)?, d.ego_id, d.start_frame)),
        _ => None,
    };
    let mut tracker = Tracker::new(cfg.imm.clone(), gains, cfg.lanes, dt, ratio, cfg.controller.horizon)?;
    let mut sensor = Sensor::new(cfg)?;
    let n_ticks = (cfg.duration / dt).round() as usize;
    let mut out = Vec::new();
    for tick in 0..n_ticks {
        let time = tick as f64 * dt;
        let measured: Vec<Vehicle> = world.targets().iter().map(|t| sensor.measure(t)).collect();
        tracker.step(&SceneSnapshot::new(time, ego, measured, cfg.lanes)?)?;
        if tick % ratio == 0 {
            let fans = tracker.fans();
            let scenarios = scenarios_for(&fans, cfg.scenario.threshold, cfg.scenario.cap)?;
            out.push(PredictionLog { time, scenarios: scenarios.iter().map(ScenarioLog::from_scenario).collect(), fans });
        }
        world.advance(time, &ego, &gains, &cfg.lanes)?;
        ego.state = match &recorded {
            Some((store, id, start)) => match store.get(*id).and_then(|t| t.state_at(start + tick as u32 + 1)) {
                Some(s) => s,
                None => break,
            },
            None => CommonState { p_lon: ego.state.p_lon + ego.state.v_lon * dt, ..ego.state },
        };
    }
    Ok(out)
}
