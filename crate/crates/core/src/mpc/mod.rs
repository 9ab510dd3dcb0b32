//! Scenario-based MPC with a worst-case braking branch.
//!
//! Each control mode (keep the current lane, or change to an adjacent lane)
//! is an optimal control problem over two jerk sequences that share their
//! first input:
//!
//! * the *nominal* branch tracks the mode's reference and keeps the
//!   time-headway gap `τ·v + Δd` to every relevant vehicle in every retained
//!   scenario (soft, with an exact penalty);
//! * the *worst-case* branch keeps the bare gap `Δd` to every relevant
//!   vehicle braking at its minimum acceleration and must reach standstill on
//!   the target centerline by the end of the horizon (hard).
//!
//! Because the worst-case branch ends in an invariant set, the previous
//! worst-case plan shifted by one step with a zero input appended is always a
//! feasible candidate for the next problem; this gives recursive
//! feasibility.

mod condense;
mod controller;
mod problem;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CommonState, Lane, LaneGeometry};

pub use condense::{rollout, AxisPrediction};
pub use controller::{decide, solve_control_mode, ControlDecision, ControlSolution, Controller, ShiftCheck};
pub use problem::{assemble_cftocp, Cftocp};

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::Config(format!("{what} bounds must satisfy min < max, got [{}, {}]", self.min, self.max)));
        }
        Ok(())
    }
}

/// Speed the reference trajectory is built at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSpeed {
    /// The ego's speed at the start of each control step.
    Current,
    /// The ego's speed at the first control step, held for the whole run.
    Initial,
    /// A fixed desired cruise speed.
    Desired(f64),
}

/// Controller parameters; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Minimum horizon length in steps; raised per step when the ego needs
    /// more steps to reach standstill.
    pub horizon: usize,
    /// Extra steps added on top of the required stopping horizon.
    pub horizon_margin: usize,
    /// Control period (s).
    pub tp: f64,
    /// State weights on `(p, v, a)` longitudinal then lateral.
    pub q_bar: [f64; 6],
    /// Jerk weights (longitudinal, lateral).
    pub r_bar: [f64; 2],
    /// Relative weight of the worst-case branch inputs; keeps the problem
    /// strictly convex without shaping the nominal plan.
    pub worst_input_weight: f64,
    pub a_lon: Bounds,
    pub a_lat: Bounds,
    pub j_lon: Bounds,
    pub j_lat: Bounds,
    /// Optional speed limit (m/s).
    pub v_max: Option<f64>,
    /// Time headway of the nominal gap (s).
    pub tau: f64,
    /// Extra longitudinal gap on top of half the summed lengths (m).
    pub gap_margin: f64,
    /// Lateral clearance added to the ego corridor when selecting relevant
    /// vehicles (m).
    pub corridor_margin: f64,
    /// Minimum acceleration of target vehicles in the worst case (m/s²).
    pub a_lv_min: f64,
    /// Quadratic and linear penalties of the nominal gap slack.
    pub slack_quadratic: f64,
    pub slack_linear: f64,
    /// Cost reported for infeasible or deactivated modes.
    pub sentinel_cost: f64,
    pub reference: ReferenceSpeed,
    /// Lanes a lane change may target; every adjacent lane when unset.
    pub lane_change_targets: Option<Vec<Lane>>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            horizon_margin: 2,
            tp: 0.4,
            q_bar: [0.0, 1.0, 1.0, 10.0, 1.0, 1.0],
            r_bar: [0.1, 0.1],
            worst_input_weight: 1e-3,
            a_lon: Bounds::new(-4.0, 4.0),
            a_lat: Bounds::new(-4.0, 4.0),
            j_lon: Bounds::new(-5.0, 5.0),
            j_lat: Bounds::new(-4.0, 4.0),
            v_max: None,
            tau: 0.4,
            gap_margin: 0.0,
            corridor_margin: 0.1,
            a_lv_min: -3.0,
            slack_quadratic: 1e3,
            slack_linear: 1e4,
            sentinel_cost: 5000.0,
            reference: ReferenceSpeed::Initial,
            lane_change_targets: None,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least one step".into()));
        }
        if !(self.tp > 0.0 && self.tp.is_finite()) {
            return Err(Error::Config(format!("control period must be positive, got {}", self.tp)));
        }
        if self.q_bar.iter().chain(&self.r_bar).any(|w| !(*w >= 0.0 && w.is_finite())) || self.r_bar.iter().any(|&r| r <= 0.0) {
            return Err(Error::Config("state weights must be non-negative and jerk weights positive".into()));
        }
        if !(self.worst_input_weight > 0.0) {
            return Err(Error::Config("worst-case input weight must be positive".into()));
        }
        self.a_lon.validate("longitudinal acceleration")?;
        self.a_lat.validate("lateral acceleration")?;
        self.j_lon.validate("longitudinal jerk")?;
        self.j_lat.validate("lateral jerk")?;
        for (b, what) in [(self.a_lon, "longitudinal acceleration"), (self.a_lat, "lateral acceleration"), (self.j_lon, "longitudinal jerk"), (self.j_lat, "lateral jerk")] {
            if !(b.min < 0.0 && b.max > 0.0) {
                return Err(Error::Config(format!("{what} bounds must contain zero")));
            }
        }
        if let Some(v) = self.v_max {
            if !(v > 0.0) {
                return Err(Error::Config(format!("speed limit must be positive, got {v}")));
            }
        }
        if !(self.tau >= 0.0 && self.gap_margin >= 0.0 && self.corridor_margin >= 0.0) {
            return Err(Error::Config("headway and margins must be non-negative".into()));
        }
        if !(self.a_lv_min < 0.0) {
            return Err(Error::Config(format!("worst-case braking must be negative, got {}", self.a_lv_min)));
        }
        if !(self.slack_quadratic > 0.0 && self.slack_linear >= 0.0) {
            return Err(Error::Config("slack penalties must be positive".into()));
        }
        if let ReferenceSpeed::Desired(v) = self.reference {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("desired speed must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Modes available from `current` under the lane-change restriction.
    pub fn modes(&self, current: Lane) -> Vec<ControlMode> {
        ControlMode::available(current)
            .into_iter()
            .filter(|m| match (m, &self.lane_change_targets) {
                (ControlMode::LaneChange(l), Some(allowed)) => allowed.contains(l),
                _ => true,
            })
            .collect()
    }

    /// Horizon needed to bring the ego from `(v, a)` to standstill with zero
    /// acceleration under the jerk and acceleration limits, plus the margin,
    /// and never below the configured minimum.
    pub fn required_horizon(&self, v: f64, a: f64) -> usize {
        let t = jerk_limited_stopping_time(v.max(0.0), a, self.a_lon.min, self.j_lon.min, self.j_lon.max);
        let steps = (t / self.tp - 1e-9).ceil().max(0.0) as usize;
        let plain = minimal_stopping_horizon(v.max(0.0), self.a_lon.min, self.tp).steps;
        self.horizon.max(steps.max(plain) + self.horizon_margin)
    }
}

/// Minimal number of control steps to brake from `v0` to standstill at the
/// constant deceleration `a_min`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingHorizon {
    pub steps: usize,
}

/// `⌈v0 / (|a_min|·tp)⌉`, computed exactly (no tolerance).
pub fn minimal_stopping_horizon(v0: f64, a_min: f64, tp: f64) -> StoppingHorizon {
    assert!(v0 >= 0.0 && a_min < 0.0 && tp > 0.0, "stopping horizon needs v0 ≥ 0, a_min < 0, tp > 0");
    StoppingHorizon { steps: (v0 / (-a_min * tp)).ceil() as usize }
}

/// Time to reach `v = a = 0` from `(v, a)`: ramp the acceleration down to
/// `a_min` at `j_min`, hold it, and ramp back to zero at `j_max`.
fn jerk_limited_stopping_time(v: f64, a: f64, a_min: f64, j_min: f64, j_max: f64) -> f64 {
    let t1 = ((a - a_min) / -j_min).max(0.0);
    let v1 = v + a * t1 + 0.5 * j_min * t1 * t1;
    let t3 = -a_min / j_max;
    let release = 0.5 * -a_min * t3;
    let t2 = ((v1 - release) / -a_min).max(0.0);
    t1 + t2 + t3
}

/// Control mode: stay in the current lane or change to an adjacent one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    LaneKeep,
    LaneChange(Lane),
}

impl std::fmt::Display for ControlMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControlMode::LaneKeep => write!(f, "lane-keep"),
            ControlMode::LaneChange(l) => write!(f, "lane-change({l})"),
        }
    }
}

impl ControlMode {
    /// Lane whose centerline the mode steers to, given the current lane.
    pub fn target_lane(&self, current: Lane) -> Lane {
        match self {
            ControlMode::LaneKeep => current,
            ControlMode::LaneChange(l) => *l,
        }
    }

    /// Lane keeping first, then lane changes to the lower and upper lane.
    pub fn available(current: Lane) -> Vec<ControlMode> {
        let mut v = vec![ControlMode::LaneKeep];
        v.extend(Lane::ALL.into_iter().filter(|l| l.is_adjacent(current)).map(ControlMode::LaneChange));
        v
    }
}

/// Reference states for `k = 1..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub target_lane: Lane,
    pub states: Vec<CommonState>,
}

/// Constant-velocity reference at the current speed on the mode's target
/// centerline.
pub fn build_reference(mode: ControlMode, current: &CommonState, lanes: &LaneGeometry, n: usize, tp: f64) -> Result<ReferenceTrajectory> {
    build_reference_at(mode, current, lanes, n, tp, current.v_lon.max(0.0))
}

/// As [`build_reference`] but at an explicit speed.
pub fn build_reference_at(mode: ControlMode, current: &CommonState, lanes: &LaneGeometry, n: usize, tp: f64, speed: f64) -> Result<ReferenceTrajectory> {
    let here = lanes.lane_of(current.p_lat)?;
    if let ControlMode::LaneChange(target) = mode {
        if !target.is_adjacent(here) {
            return Err(Error::NonAdjacentTarget { from: here.index(), to: target.index() });
        }
    }
    let target_lane = mode.target_lane(here);
    let lat = lanes.centerline(target_lane);
    let states = (1..=n).map(|k| CommonState::new(current.p_lon + speed * tp * k as f64, speed, 0.0, lat, 0.0, 0.0)).collect();
    Ok(ReferenceTrajectory { target_lane, states })
}
