//! Motion of the target vehicles: scripted behaviours or exact replay of
//! recorded tracks.

use crate::error::{Error, Result};
use crate::policy::{build_mode_dynamics, virtual_lead, GainSet};
use crate::types::{CommonState, FullState, LaneGeometry, Longitudinal, Vector7, Vehicle};

use super::config::{Behavior, DatasetScene, SyntheticScene, TargetSpec};
use super::tracks::{ingest_tracks, TrackStore};

#[derive(Debug, Clone)]
struct Actor {
    spec: TargetSpec,
    vehicle: Vehicle,
    /// Full policy state for closed-loop policy behaviours.
    z: Option<Vector7>,
}

#[derive(Debug, Clone)]
enum Source {
    Scripted(Vec<Actor>),
    Replay { store: TrackStore, start_frame: u32, ego_id: u32, targets: Option<Vec<u32>> },
}

/// Target vehicles of one experiment, advanced one filter tick at a time.
#[derive(Debug, Clone)]
pub struct World {
    source: Source,
    tick: u32,
    dt: f64,
}

fn straightened(s: &CommonState) -> CommonState {
    CommonState::new(s.p_lon, s.v_lon, 0.0, s.p_lat, 0.0, 0.0)
}

/// Constant-deceleration step that stops exactly at standstill.
fn brake_step(s: &CommonState, decel: f64, dt: f64) -> CommonState {
    let t = if s.v_lon > 0.0 { dt.min(s.v_lon / -decel) } else { 0.0 };
    let p = s.p_lon + s.v_lon * t + 0.5 * decel * t * t;
    let v = (s.v_lon + decel * dt).max(0.0);
    CommonState::new(p, v, if v > 0.0 { decel } else { 0.0 }, s.p_lat, 0.0, 0.0)
}

impl World {
    /// Scripted targets of a synthetic scene; returns the world and the ego.
    pub fn synthetic(scene: &SyntheticScene, dt: f64) -> Result<(Self, Vehicle)> {
        let actors = scene
            .targets
            .iter()
            .map(|t| {
                let mut vehicle = t.vehicle.vehicle();
                let z = match t.behavior {
                    Behavior::ConstantVelocity | Behavior::Brake { .. } => {
                        vehicle.state = straightened(&vehicle.state);
                        None
                    }
                    Behavior::Policy { r_ref, .. } => Some(FullState::new(vehicle.state, r_ref)?.to_vector()),
                };
                Ok(Actor { spec: *t, vehicle, z })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((Self { source: Source::Scripted(actors), tick: 0, dt }, scene.ego.vehicle()))
    }

    /// Replay of a recorded scene; returns the world and the ego at the
    /// start frame. The ego's recorded future is not used.
    pub fn replay(scene: &DatasetScene, dt: f64) -> Result<(Self, Vehicle)> {
        let store = ingest_tracks(&scene.path, &scene.transform)?;
        Self::from_store(store, scene, dt)
    }

    pub fn from_store(store: TrackStore, scene: &DatasetScene, dt: f64) -> Result<(Self, Vehicle)> {
        let ego = store
            .get(scene.ego_id)
            .and_then(|t| t.vehicle_at(scene.start_frame))
            .ok_or_else(|| Error::Config(format!("ego {} has no record at frame {}", scene.ego_id, scene.start_frame)))?;
        if let Some(ids) = &scene.targets {
            for id in ids {
                if store.get(*id).is_none() {
                    return Err(Error::Config(format!("target {id} is not in the track file")));
                }
            }
        }
        let source = Source::Replay { store, start_frame: scene.start_frame, ego_id: scene.ego_id, targets: scene.targets.clone() };
        Ok((Self { source, tick: 0, dt }, ego))
    }

    /// Targets at the current tick, ascending by id.
    pub fn targets(&self) -> Vec<Vehicle> {
        match &self.source {
            Source::Scripted(actors) => actors.iter().map(|a| a.vehicle).collect(),
            Source::Replay { store, start_frame, ego_id, targets } => {
                let frame = start_frame + self.tick;
                store
                    .ids_at(frame)
                    .into_iter()
                    .filter(|id| id != ego_id && targets.as_ref().is_none_or(|t| t.contains(id)))
                    .filter_map(|id| store.get(id).and_then(|t| t.vehicle_at(frame)))
                    .collect()
            }
        }
    }

    /// Advances every target by one tick; `ego` is visible to policy-driven
    /// targets as a potential lead vehicle.
    pub fn advance(&mut self, time: f64, ego: &Vehicle, gains: &GainSet, lanes: &LaneGeometry) -> Result<()> {
        let dt = self.dt;
        if let Source::Scripted(actors) = &mut self.source {
            let snapshot: Vec<Vehicle> = actors.iter().map(|a| a.vehicle).chain(std::iter::once(*ego)).collect();
            for a in actors.iter_mut() {
                let s = a.vehicle.state;
                a.vehicle.state = match a.spec.behavior {
                    Behavior::ConstantVelocity => CommonState { p_lon: s.p_lon + s.v_lon * dt, ..s },
                    Behavior::Brake { start, decel } => {
                        if time + 1e-9 >= start {
                            brake_step(&s, decel, dt)
                        } else {
                            CommonState { p_lon: s.p_lon + s.v_lon * dt, ..s }
                        }
                    }
                    Behavior::Policy { mode, .. } => {
                        let lead = (mode.longitudinal == Longitudinal::DK).then(|| {
                            snapshot
                                .iter()
                                .filter(|o| o.params.id != a.vehicle.params.id)
                                .filter(|o| o.state.p_lon > s.p_lon && lanes.lane_of_clamped(o.state.p_lat) == mode.target_lane)
                                .min_by(|x, y| x.state.p_lon.total_cmp(&y.state.p_lon))
                                .map_or_else(|| virtual_lead(&s), |o| o.state)
                        });
                        let d = build_mode_dynamics(mode, gains, dt, lanes, lead.as_ref())?;
                        let z = d.f * a.z.expect("policy actors carry a full state") + d.e;
                        a.z = Some(z);
                        let mut c = FullState::from_vector(&z).common;
                        c.v_lon = c.v_lon.max(0.0);
                        c
                    }
                };
            }
        }
        self.tick += 1;
        Ok(())
    }
}
