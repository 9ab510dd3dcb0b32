//! Synthetic single-mode truth for identification tests.
//!
//! One target vehicle is simulated under a fixed policy mode with the
//! filter's own process noise. Every lane has a lead vehicle whose
//! acceleration follows a ±2 m/s² square wave, which gives the
//! distance-keeping and velocity-tracking hypotheses distinguishable
//! signatures. All vehicles are measured with Gaussian noise.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use scmpc::imm::{ImmConfig, Tracker};
use scmpc::policy::{build_mode_dynamics, synthesize_gains, GainConfig};
use scmpc::types::*;

pub const T: f64 = 0.04;
pub const TRUTH_ID: u32 = 10;

pub struct IdentificationRun {
    /// Probability of the true mode after each filter cycle.
    pub true_mu: Vec<f64>,
    /// Largest |Σμ − 1| over all cycles and vehicles.
    pub worst_sum_error: f64,
}

fn noisy(rng: &mut ChaCha8Rng, x: &CommonState, sd: &[f64; 6]) -> CommonState {
    let v = x.to_vector();
    let n: Vec<f64> = (0..6).map(|i| v[i] + Normal::new(0.0, sd[i]).unwrap().sample(rng)).collect();
    CommonState::new(n[0], n[1].max(0.0), n[2], n[3], n[4], n[5])
}

pub fn run_identification(truth: PolicyMode, seed: u64, cycles: usize) -> IdentificationRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ImmConfig::default();
    let gains = synthesize_gains(&GainConfig::default(), T).unwrap();
    let lanes = LaneGeometry::default();
    let mut tracker = Tracker::new(cfg.clone(), gains, lanes, T, 10, 15).unwrap();

    let v0 = rng.random_range(20.0..30.0);
    let start_lane = Lane::ALL[rng.random_range(0..3)];
    let mut leads: Vec<(CommonState, f64)> = Lane::ALL
        .iter()
        .map(|&l| {
            let s = CommonState::new(1.5 * v0 + 15.0, v0 + rng.random_range(-1.0..1.0), 0.0, lanes.centerline(l), 0.0, 0.0);
            (s, rng.random_range(0.0..3.0))
        })
        .collect();
    let target_lead = leads[truth.target_lane.slot()].0;
    let (p0, r0) = match truth.longitudinal {
        Longitudinal::VT => (0.0, v0 + rng.random_range(-3.0..3.0)),
        Longitudinal::DK => (target_lead.p_lon - 1.5 * target_lead.v_lon + rng.random_range(-3.0..3.0), 1.5),
    };
    let lat0 = lanes.centerline(start_lane) + rng.random_range(-0.5..0.5);
    let mut z = FullState { common: CommonState::new(p0, v0, 0.0, lat0, 0.0, 0.0), r_ref: r0 }.to_vector();
    let q = cfg.process_noise(truth);
    let q_sd: Vec<f64> = (0..7).map(|i| q[(i, i)].sqrt()).collect();
    let r_sd = cfg.r_common.map(f64::sqrt);
    let ego = Vehicle {
        params: VehicleParams::new(0, 4.5, 1.9).unwrap(),
        state: CommonState::new(-300.0, v0, 0.0, lanes.centerline(Lane::ALL[1]), 0.0, 0.0),
    };
    let params = |id| VehicleParams::new(id, 4.5, 1.9).unwrap();

    let mut out = IdentificationRun { true_mu: Vec::new(), worst_sum_error: 0.0 };
    for k in 0..=cycles {
        if k > 0 {
            // Truth advances with the lead state of the previous tick.
            let lv = leads[truth.target_lane.slot()].0;
            let d = build_mode_dynamics(truth, &gains, T, &lanes, Some(&lv)).unwrap();
            let w = DVector::from_fn(7, |i, _| Normal::new(0.0, q_sd[i]).unwrap().sample(&mut rng));
            z = d.f * z + d.e + Vector7::from_iterator(w.iter().copied());
            for (s, phase) in leads.iter_mut() {
                let t = k as f64 * T + *phase;
                let a = if (2.0 * std::f64::consts::PI * t / 3.0).sin() >= 0.0 { 2.0 } else { -2.0 };
                let lon = integrator_a(T) * s.lon();
                *s = CommonState::new(lon[0], lon[1].max(0.0), a, s.p_lat, 0.0, 0.0);
            }
        }
        let truth_state = FullState::from_vector(&z).common;
        let mut targets = vec![Vehicle { params: params(TRUTH_ID), state: noisy(&mut rng, &truth_state, &r_sd) }];
        for (i, (s, _)) in leads.iter().enumerate() {
            targets.push(Vehicle { params: params(20 + i as u32), state: noisy(&mut rng, s, &r_sd) });
        }
        let scene = SceneSnapshot::new(k as f64 * T, ego, targets, lanes).unwrap();
        tracker.step(&scene).unwrap();
        for f in tracker.filters.values() {
            let s: f64 = f.mu().iter().sum();
            out.worst_sum_error = out.worst_sum_error.max((s - 1.0).abs());
        }
        if k > 0 {
            out.true_mu.push(tracker.filters[&TRUTH_ID].mu()[truth.index()]);
        }
    }
    out
}
