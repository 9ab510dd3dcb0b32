//! Parallel vs sequential solving of the per-mode control problems, and a
//! whole closed-loop run for scale.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use scmpc::mpc::{solve_control_mode, Controller, ControllerConfig};
use scmpc::par;
use scmpc::sim::{case1, run_closed_loop, ExperimentConfig};
use scmpc::types::{CommonState, LaneGeometry, SceneSnapshot, Vehicle, VehicleParams};

fn vehicle(id: u32, p_lon: f64, v: f64, p_lat: f64) -> Vehicle {
    Vehicle { params: VehicleParams { id, length: 4.6, width: 1.9 }, state: CommonState::new(p_lon, v, 0.0, p_lat, 0.0, 0.0) }
}

/// Ego in the middle lane with traffic in all three lanes: three modes.
fn middle_lane_scene() -> SceneSnapshot {
    let lanes = LaneGeometry::default();
    let [l1, l2, l3] = lanes.centerlines;
    let targets = vec![vehicle(1, 70.0, 24.0, l2), vehicle(2, 30.0, 27.0, l1), vehicle(3, 90.0, 29.0, l3)];
    SceneSnapshot::new(0.0, vehicle(0, 0.0, 28.0, l2), targets, lanes).unwrap()
}

fn mode_solves(c: &mut Criterion) {
    let controller = Controller::new(ControllerConfig::default()).unwrap();
    let problems = controller.assemble(&middle_lane_scene(), &[]).unwrap();
    let mut g = c.benchmark_group("mode_solves");
    g.bench_function("parallel", |b| b.iter(|| par::map(black_box(&problems), |p| solve_control_mode(p, None).unwrap().cost)));
    g.bench_function("sequential", |b| b.iter(|| par::map_seq(black_box(&problems), |p| solve_control_mode(p, None).unwrap().cost)));
    g.finish();
}

fn scene_batch(c: &mut Criterion) {
    let configs: Vec<ExperimentConfig> =
        (0..4).map(|seed| ExperimentConfig { duration: 2.0, ..scmpc::sim::stress(seed) }).collect();
    let mut g = c.benchmark_group("stress_batch");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| par::map(black_box(&configs), |cfg| run_closed_loop(cfg).unwrap().steps.len())));
    g.bench_function("sequential", |b| b.iter(|| par::map_seq(black_box(&configs), |cfg| run_closed_loop(cfg).unwrap().steps.len())));
    g.finish();
}

fn closed_loop(c: &mut Criterion) {
    let cfg = case1();
    let mut g = c.benchmark_group("closed_loop");
    g.sample_size(10);
    g.bench_function("case1", |b| b.iter(|| run_closed_loop(black_box(&cfg)).unwrap().summary.control_steps));
    g.finish();
}

criterion_group!(benches, mode_solves, scene_batch, closed_loop);
criterion_main!(benches);
