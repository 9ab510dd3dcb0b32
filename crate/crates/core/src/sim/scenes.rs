//! Built-in experiments: the two recorded highway cases, an empty road and
//! randomized braking scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Behavior, ExperimentConfig, SceneSpec, StressScene, SyntheticScene, TargetSpec, VehicleSpec};
use crate::error::{Error, Result};
use crate::imm::gap_requirement;
use crate::mpc::{Controller, ControllerConfig};
use crate::types::{CommonState, Lane, LaneGeometry, Longitudinal, PolicyMode, SceneSnapshot, Vehicle};

fn spec(id: u32, s: [f64; 6], length: f64, width: f64) -> VehicleSpec {
    VehicleSpec { id, length, width, state: CommonState::new(s[0], s[1], s[2], s[3], s[4], s[5]) }
}

/// Keeps its initial speed and settles on the centreline of its lane.
fn cruising(v: VehicleSpec) -> TargetSpec {
    let lane = LaneGeometry::default().lane_of_clamped(v.state.p_lat);
    let mode = PolicyMode { longitudinal: Longitudinal::VT, target_lane: lane };
    TargetSpec { vehicle: v, behavior: Behavior::Policy { mode, r_ref: v.state.v_lon } }
}

/// Controller of the recorded cases: lane changes only target lane 1.
fn case_controller() -> ControllerConfig {
    ControllerConfig { lane_change_targets: Some(vec![Lane::ALL[0]]), ..ControllerConfig::default() }
}

/// Ego in lane 2 approaching a slow truck, with a faster car in lane 1.
pub fn case1() -> ExperimentConfig {
    ExperimentConfig {
        name: "case1".into(),
        controller: case_controller(),
        scene: SceneSpec::Synthetic(SyntheticScene {
            ego: spec(0, [2.84, 34.8, 0.27, 25.65, -0.09, -0.01], 4.85, 2.02),
            targets: vec![
                cruising(spec(1, [127.87, 32.74, 0.13, 21.52, -0.21, 0.2], 5.96, 2.32)),
                cruising(spec(2, [141.19, 23.04, 0.05, 25.42, 0.1, -0.03], 14.35, 2.5)),
            ],
        }),
        ..ExperimentConfig::default()
    }
}

/// Ego in lane 2 closing on a slower lead, with a fast car behind in lane 1.
pub fn case2() -> ExperimentConfig {
    ExperimentConfig {
        name: "case2".into(),
        controller: case_controller(),
        scene: SceneSpec::Synthetic(SyntheticScene {
            ego: spec(0, [181.5, 25.07, -0.29, 25.49, 0.09, -0.01], 4.14, 1.92),
            targets: vec![
                cruising(spec(1, [151.54, 32.59, 0.28, 22.21, -0.27, 0.01], 4.75, 2.02)),
                cruising(spec(2, [201.31, 23.21, 0.17, 25.62, 0.17, -0.02], 9.2, 2.5)),
            ],
        }),
        ..ExperimentConfig::default()
    }
}

/// Ego alone on the lane-2 centerline at 25 m/s.
pub fn empty_road() -> ExperimentConfig {
    let lanes = LaneGeometry::default();
    ExperimentConfig {
        name: "empty".into(),
        scene: SceneSpec::Synthetic(SyntheticScene {
            ego: spec(0, [0.0, 25.0, 0.0, lanes.centerlines[1], 0.0, 0.0], 4.5, 1.9),
            targets: Vec::new(),
        }),
        ..ExperimentConfig::default()
    }
}

/// Randomized braking scene drawn from `seed`.
pub fn stress(seed: u64) -> ExperimentConfig {
    ExperimentConfig { name: format!("stress-{seed}"), seed, scene: SceneSpec::Stress(StressScene::default()), ..ExperimentConfig::default() }
}

/// Largest number of draws before giving up on a feasible stress scene.
const MAX_DRAWS: usize = 1000;

/// Draws a stress scene: the ego at `v0 ∈ [20, 35]` m/s, a lead vehicle in
/// its lane that brakes at −3 m/s² from a random instant within the run,
/// and up to two constant-speed vehicles ahead in the other lanes. Draws
/// whose first control step is infeasible are rejected; the search is
/// deterministic in `seed`.
pub fn draw_stress_scene(cfg: &ExperimentConfig, spec_: &StressScene, seed: u64) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lanes = cfg.lanes;
    for _ in 0..MAX_DRAWS {
        let scene = draw_once(&mut rng, cfg, spec_, &lanes);
        if initially_feasible(cfg, &scene)? {
            return Ok(scene);
        }
    }
    Err(Error::Config(format!("no initially feasible stress scene found for seed {seed}")))
}

fn draw_once(rng: &mut ChaCha8Rng, cfg: &ExperimentConfig, s: &StressScene, lanes: &LaneGeometry) -> SyntheticScene {
    let n = s.targets.unwrap_or_else(|| rng.random_range(1..=3));
    let ego_lane = Lane::ALL[rng.random_range(0..3)];
    let v0 = rng.random_range(20.0..35.0);
    let ego_len = rng.random_range(4.2..5.2);
    let ego_w = rng.random_range(1.8..2.1);
    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.3..0.3);
    let ego_lat = lanes.centerline(ego_lane) + jitter(rng);
    let ego = spec(0, [0.0, v0, rng.random_range(-0.5..0.5), ego_lat, 0.0, 0.0], ego_len, ego_w);

    let lv_len = if rng.random_bool(0.3) { rng.random_range(8.0..16.0) } else { rng.random_range(4.0..5.5) };
    let dd = gap_requirement(ego_len, lv_len, cfg.controller.gap_margin);
    let gap = rng.random_range((cfg.controller.tau * v0 + dd)..(cfg.controller.tau * v0 + dd + 70.0));
    let v_lv = (v0 + rng.random_range(-6.0..2.0)).max(5.0);
    let lv = spec(1, [gap, v_lv, 0.0, lanes.centerline(ego_lane) + jitter(rng), 0.0, 0.0], lv_len, rng.random_range(1.9..2.5));
    let start = rng.random_range(0.0..(0.8 * cfg.duration));
    let mut targets = vec![TargetSpec { vehicle: lv, behavior: Behavior::Brake { start, decel: cfg.controller.a_lv_min } }];

    let others: Vec<Lane> = Lane::ALL.into_iter().filter(|l| *l != ego_lane).collect();
    for (i, lane) in others.into_iter().take(n - 1).enumerate() {
        let len = rng.random_range(4.0..12.0);
        let ahead = rng.random_range(10.0..100.0);
        let v = (v0 + rng.random_range(-5.0..5.0)).max(5.0);
        let tv = spec(2 + i as u32, [ahead, v, 0.0, lanes.centerline(lane) + jitter(rng), 0.0, 0.0], len, rng.random_range(1.9..2.5));
        targets.push(TargetSpec { vehicle: tv, behavior: Behavior::ConstantVelocity });
    }
    SyntheticScene { ego, targets }
}

fn initially_feasible(cfg: &ExperimentConfig, scene: &SyntheticScene) -> Result<bool> {
    let targets: Vec<Vehicle> = scene.targets.iter().map(|t| t.vehicle.vehicle()).collect();
    let snapshot = SceneSnapshot::new(0.0, scene.ego.vehicle(), targets, cfg.lanes)?;
    let mut controller = Controller::new(cfg.controller.clone())?;
    Ok(!controller.step(&snapshot, &[], false)?.emergency)
}
