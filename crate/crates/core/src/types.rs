//! Shared domain vocabulary: kinematic states, vehicles, lanes, policy modes
//! and the triple-integrator jerk model.
//!
//! Longitudinal positions increase in the driving direction and every vehicle
//! is referenced at its geometric centre.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 6-vector in the common-state layout `[p_lon, v_lon, a_lon, p_lat, v_lat, a_lat]`.
pub type Vector6 = SVector<f64, 6>;
/// 7-vector in the full-state layout `[p_lon, v_lon, a_lon, r_ref, p_lat, v_lat, a_lat]`.
pub type Vector7 = SVector<f64, 7>;

/// Position, velocity and acceleration in both road directions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CommonState {
    pub p_lon: f64,
    pub v_lon: f64,
    pub a_lon: f64,
    pub p_lat: f64,
    pub v_lat: f64,
    pub a_lat: f64,
}

impl CommonState {
    pub const fn new(p_lon: f64, v_lon: f64, a_lon: f64, p_lat: f64, v_lat: f64, a_lat: f64) -> Self {
        Self { p_lon, v_lon, a_lon, p_lat, v_lat, a_lat }
    }

    /// Checks finiteness and forward driving (`v_lon ≥ 0`).
    pub fn validate(&self) -> Result<()> {
        if !self.to_vector().iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite component in {self:?}")));
        }
        if self.v_lon < 0.0 {
            return Err(Error::InvalidState(format!("negative longitudinal velocity {}", self.v_lon)));
        }
        Ok(())
    }

    pub fn to_vector(&self) -> Vector6 {
        Vector6::new(self.p_lon, self.v_lon, self.a_lon, self.p_lat, self.v_lat, self.a_lat)
    }

    pub fn from_vector(v: &Vector6) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn lon(&self) -> Vector3<f64> {
        Vector3::new(self.p_lon, self.v_lon, self.a_lon)
    }

    pub fn lat(&self) -> Vector3<f64> {
        Vector3::new(self.p_lat, self.v_lat, self.a_lat)
    }

    pub fn from_axes(lon: &Vector3<f64>, lat: &Vector3<f64>) -> Self {
        Self::new(lon[0], lon[1], lon[2], lat[0], lat[1], lat[2])
    }
}

/// Common state plus the mode-dependent reference parameter: a reference
/// velocity (m/s) for velocity tracking, a time gap (s) for distance keeping.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FullState {
    pub common: CommonState,
    pub r_ref: f64,
}

impl FullState {
    pub fn new(common: CommonState, r_ref: f64) -> Result<Self> {
        if !(r_ref >= 0.0) || !r_ref.is_finite() {
            return Err(Error::InvalidState(format!("reference parameter must be finite and ≥ 0, got {r_ref}")));
        }
        Ok(Self { common, r_ref })
    }

    /// Layout `[x_lon | r_ref | x_lat]`.
    pub fn to_vector(&self) -> Vector7 {
        let c = &self.common;
        Vector7::from([c.p_lon, c.v_lon, c.a_lon, self.r_ref, c.p_lat, c.v_lat, c.a_lat])
    }

    /// Inverse of [`FullState::to_vector`]; the reference parameter is not clamped.
    pub fn from_vector(v: &Vector7) -> Self {
        Self { common: CommonState::new(v[0], v[1], v[2], v[4], v[5], v[6]), r_ref: v[3] }
    }
}

/// Index map between the 7-dim full state and the 6-dim common state.
pub const COMMON_IN_FULL: [usize; 6] = [0, 1, 2, 4, 5, 6];
/// Position of the reference parameter inside the full state.
pub const R_REF_INDEX: usize = 3;

/// Longitudinal intention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Longitudinal {
    /// Velocity tracking: follow an unknown reference speed.
    VT,
    /// Distance keeping: hold a time gap behind the lead vehicle.
    DK,
}

/// Lane index (1 = lowest lateral coordinate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Lane(u8);

impl Lane {
    pub const ALL: [Lane; 3] = [Lane(1), Lane(2), Lane(3)];

    pub fn new(index: u8) -> Result<Self> {
        if (1..=3).contains(&index) {
            Ok(Self(index))
        } else {
            Err(Error::UnknownLane(index))
        }
    }

    pub const fn index(self) -> u8 {
        self.0
    }

    /// Zero-based slot for array indexing.
    pub const fn slot(self) -> usize {
        self.0 as usize - 1
    }

    pub fn is_adjacent(self, other: Lane) -> bool {
        self.0.abs_diff(other.0) == 1
    }
}

impl TryFrom<u8> for Lane {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Lane::new(v)
    }
}

impl From<Lane> for u8 {
    fn from(l: Lane) -> u8 {
        l.0
    }
}

impl fmt::Display for Lane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One intention hypothesis: longitudinal behaviour × target lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PolicyMode {
    pub longitudinal: Longitudinal,
    pub target_lane: Lane,
}

/// Number of policy modes.
pub const M: usize = 6;

impl PolicyMode {
    /// All modes in indexing order: VT-1, VT-2, VT-3, DK-1, DK-2, DK-3.
    pub const ALL: [PolicyMode; M] = [
        PolicyMode { longitudinal: Longitudinal::VT, target_lane: Lane(1) },
        PolicyMode { longitudinal: Longitudinal::VT, target_lane: Lane(2) },
        PolicyMode { longitudinal: Longitudinal::VT, target_lane: Lane(3) },
        PolicyMode { longitudinal: Longitudinal::DK, target_lane: Lane(1) },
        PolicyMode { longitudinal: Longitudinal::DK, target_lane: Lane(2) },
        PolicyMode { longitudinal: Longitudinal::DK, target_lane: Lane(3) },
    ];

    pub const fn index(self) -> usize {
        let base = match self.longitudinal {
            Longitudinal::VT => 0,
            Longitudinal::DK => 3,
        };
        base + self.target_lane.slot()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}-{}", self.longitudinal, self.target_lane)
    }
}

/// Vehicle identity and footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub id: u32,
    pub length: f64,
    pub width: f64,
}

impl VehicleParams {
    pub fn new(id: u32, length: f64, width: f64) -> Result<Self> {
        let p = Self { id, length, width };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "vehicle {} needs positive length and width, got {} × {}",
                self.id, self.length, self.width
            )));
        }
        Ok(())
    }
}

/// Straight three-lane road described by centerlines and outer bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneGeometry {
    pub centerlines: [f64; 3],
    pub l_lb: f64,
    pub l_ub: f64,
}

impl Default for LaneGeometry {
    fn default() -> Self {
        Self { centerlines: [22.98, 26.88, 31.3], l_lb: 21.0, l_ub: 33.8 }
    }
}

impl LaneGeometry {
    pub fn new(centerlines: [f64; 3], l_lb: f64, l_ub: f64) -> Result<Self> {
        let g = Self { centerlines, l_lb, l_ub };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.centerlines;
        if !(self.l_lb < c[0] && c[0] < c[1] && c[1] < c[2] && c[2] < self.l_ub) {
            return Err(Error::InvalidParameter(format!(
                "lane geometry must satisfy l_lb < c1 < c2 < c3 < l_ub, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn centerline(&self, lane: Lane) -> f64 {
        self.centerlines[lane.slot()]
    }

    /// Boundary between lane `i` and lane `i + 1` (`i` ∈ {1, 2}).
    pub fn boundary_above(&self, lane: Lane) -> Option<f64> {
        match lane.index() {
            1 | 2 => Some(0.5 * (self.centerlines[lane.slot()] + self.centerlines[lane.slot() + 1])),
            _ => None,
        }
    }

    /// Lateral interval `[lo, hi)` covered by a lane.
    pub fn lane_interval(&self, lane: Lane) -> (f64, f64) {
        let lo = match lane.index() {
            1 => self.l_lb,
            i => self.boundary_above(Lane(i - 1)).unwrap(),
        };
        let hi = self.boundary_above(lane).unwrap_or(self.l_ub);
        (lo, hi)
    }

    /// Lane lookup; midpoint boundaries belong to the upper lane.
    pub fn lane_of(&self, p_lat: f64) -> Result<Lane> {
        if !(self.l_lb <= p_lat && p_lat <= self.l_ub) {
            return Err(Error::OutOfRoad { p_lat, l_lb: self.l_lb, l_ub: self.l_ub });
        }
        Ok(self.lane_of_clamped(p_lat))
    }

    /// Lane lookup that maps off-road positions to the nearest outer lane.
    /// Used for predicted positions, which may overshoot slightly.
    pub fn lane_of_clamped(&self, p_lat: f64) -> Lane {
        let b12 = 0.5 * (self.centerlines[0] + self.centerlines[1]);
        let b23 = 0.5 * (self.centerlines[1] + self.centerlines[2]);
        if p_lat < b12 {
            Lane(1)
        } else if p_lat < b23 {
            Lane(2)
        } else {
            Lane(3)
        }
    }

    /// All lanes touched by the lateral interval `[p_lat − w/2, p_lat + w/2]`.
    pub fn lanes_touched(&self, p_lat: f64, width: f64) -> BTreeSet<Lane> {
        let lo = self.lane_of_clamped(p_lat - 0.5 * width);
        let hi = self.lane_of_clamped(p_lat + 0.5 * width);
        (lo.0..=hi.0).map(Lane).collect()
    }
}

/// Free function form of [`LaneGeometry::lane_of`].
pub fn lane_of(state: &CommonState, lanes: &LaneGeometry) -> Result<Lane> {
    lanes.lane_of(state.p_lat)
}

/// Vehicle parameters together with its current state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub params: VehicleParams,
    pub state: CommonState,
}

/// Snapshot of all vehicles at one time instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSnapshot {
    pub time: f64,
    pub ego: Vehicle,
    pub targets: Vec<Vehicle>,
    pub lanes: LaneGeometry,
}

impl SceneSnapshot {
    pub fn new(time: f64, ego: Vehicle, targets: Vec<Vehicle>, lanes: LaneGeometry) -> Result<Self> {
        let s = Self { time, ego, targets, lanes };
        s.validate()?;
        Ok(s)
    }

    /// Unique ids, valid footprints and states, consistent road.
    pub fn validate(&self) -> Result<()> {
        self.lanes.validate()?;
        let mut seen = BTreeSet::new();
        for v in std::iter::once(&self.ego).chain(&self.targets) {
            v.params.validate()?;
            v.state.validate()?;
            if !seen.insert(v.params.id) {
                return Err(Error::InvalidParameter(format!("duplicate vehicle id {}", v.params.id)));
            }
        }
        Ok(())
    }

    pub fn target(&self, id: u32) -> Option<&Vehicle> {
        self.targets.iter().find(|v| v.params.id == id)
    }
}

/// Transition matrix of the triple integrator over `dt`.
pub fn integrator_a(dt: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, dt, 0.5 * dt * dt, 0.0, 1.0, dt, 0.0, 0.0, 1.0)
}

/// Jerk input column of the triple integrator over `dt`.
pub fn integrator_b(dt: f64) -> Vector3<f64> {
    Vector3::new(dt * dt * dt / 6.0, 0.5 * dt * dt, dt)
}

/// Exact zero-order-hold jerk update applied independently per axis. The
/// update is purely linear; callers clamp `v_lon` at standstill if needed.
pub fn jerk_step(state: &CommonState, u: [f64; 2], dt: f64) -> CommonState {
    let a = integrator_a(dt);
    let b = integrator_b(dt);
    let lon = a * state.lon() + b * u[0];
    let lat = a * state.lat() + b * u[1];
    CommonState::from_axes(&lon, &lat)
}

/// Axis-aligned footprint overlap of two centre-referenced vehicles.
pub fn footprints_overlap(a: &Vehicle, b: &Vehicle) -> bool {
    let dx = (a.state.p_lon - b.state.p_lon).abs();
    let dy = (a.state.p_lat - b.state.p_lat).abs();
    dx < 0.5 * (a.params.length + b.params.length) && dy < 0.5 * (a.params.width + b.params.width)
}
