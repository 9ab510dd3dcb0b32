//! Multi-step state prediction under one policy mode.

use nalgebra::Matrix3;

use crate::error::Result;
use crate::policy::{build_mode_dynamics, virtual_lead, GainSet, ModeDynamics};
use crate::types::{CommonState, FullState, LaneGeometry, Longitudinal, PolicyMode, Vector7};

/// Where distance-keeping modes take their lead vehicle from.
#[derive(Debug, Clone, Copy)]
pub enum LeadSource<'a> {
    /// A stand-in far ahead at the follower's initial speed.
    Virtual,
    /// An already-predicted trajectory on the same time grid; entry `k` is
    /// the lead vehicle's state at step `k`.
    Track(&'a [CommonState]),
}

/// States `z_0..z_n` and the longitudinal sensitivity `∂(p, v, a)_k / ∂(p, v, a)_0`.
#[derive(Debug, Clone)]
pub struct ModePrediction {
    pub states: Vec<Vector7>,
    pub sensitivity: Vec<Matrix3<f64>>,
}

impl ModePrediction {
    pub fn common(&self, k: usize) -> CommonState {
        FullState::from_vector(&self.states[k]).common
    }
}

/// Composes `z_{k+1} = F_k z_k + E_k` over the given per-step dynamics;
/// returns `steps.len() + 1` states, the first being `z0`.
pub fn predict_horizon(z0: &Vector7, steps: &[ModeDynamics]) -> Vec<Vector7> {
    let mut out = Vec::with_capacity(steps.len() + 1);
    let mut z = *z0;
    out.push(z);
    for d in steps {
        z = d.f * z + d.e;
        out.push(z);
    }
    out
}

/// Predicts `n` steps of length `dt` under `mode`, refreshing the lead
/// vehicle coupling of distance-keeping modes at every step.
pub fn predict_mode(
    z0: &Vector7,
    mode: PolicyMode,
    gains: &GainSet,
    dt: f64,
    lanes: &LaneGeometry,
    lead: LeadSource<'_>,
    n: usize,
) -> Result<ModePrediction> {
    let start = FullState::from_vector(z0).common;
    let virt = virtual_lead(&start);
    let mut states = Vec::with_capacity(n + 1);
    let mut sensitivity = Vec::with_capacity(n + 1);
    let mut z = *z0;
    let mut s = Matrix3::identity();
    states.push(z);
    sensitivity.push(s);
    for k in 0..n {
        let lv = match (mode.longitudinal, lead) {
            (Longitudinal::VT, _) => None,
            (Longitudinal::DK, LeadSource::Track(t)) => Some(t[k.min(t.len() - 1)]),
            (Longitudinal::DK, LeadSource::Virtual) => {
                let mut v = virt;
                v.p_lon += virt.v_lon * dt * k as f64;
                Some(v)
            }
        };
        let d = build_mode_dynamics(mode, gains, dt, lanes, lv.as_ref())?;
        z = d.f * z + d.e;
        s = d.f.fixed_view::<3, 3>(0, 0) * s;
        states.push(z);
        sensitivity.push(s);
    }
    Ok(ModePrediction { states, sensitivity })
}

/// Constant-velocity, lane-keeping prediction of a vehicle whose intentions
/// are not modelled (the ego vehicle).
pub fn constant_velocity(x: &CommonState, dt: f64, n: usize) -> Vec<CommonState> {
    (0..=n)
        .map(|k| {
            let t = k as f64 * dt;
            CommonState::new(x.p_lon + x.v_lon * t, x.v_lon, 0.0, x.p_lat, 0.0, 0.0)
        })
        .collect()
}
