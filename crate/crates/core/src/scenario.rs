//! Joint maneuver scenarios of the target vehicles and the worst-case
//! braking scenario used by the feasibility branch of the controller.
//!
//! A scenario assigns one policy mode to every target vehicle. Assuming the
//! vehicles are independent, its probability is the product of the
//! per-vehicle mode probabilities. Unlikely scenarios are dropped and the
//! survivors renormalized.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imm::PredictionFan;
use crate::policy::virtual_lead;
use crate::types::{CommonState, Lane, LaneGeometry, PolicyMode, SceneSnapshot, Vehicle, M};

/// Default probability threshold below which scenarios are discarded.
pub const DEFAULT_THRESHOLD: f64 = 0.05;
/// Default cap on the number of fully enumerated scenarios.
pub const DEFAULT_CAP: usize = 4096;

/// One joint assignment of policy modes to target vehicles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub assignment: BTreeMap<u32, PolicyMode>,
    pub probability: f64,
    /// Predicted trajectory of each vehicle under its assigned mode (`N + 1`
    /// entries at the control period).
    pub trajectories: BTreeMap<u32, Vec<CommonState>>,
}

fn check_fans(fans: &[PredictionFan]) -> Result<()> {
    for f in fans {
        if f.modes.len() != M {
            return Err(Error::Dimension(format!("vehicle {} has {} mode trajectories, expected {M}", f.id, f.modes.len())));
        }
        let n = f.fused.len();
        if f.modes.iter().any(|t| t.len() != n) {
            return Err(Error::Dimension(format!("vehicle {} has mode trajectories of unequal length", f.id)));
        }
        if f.mu.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidParameter(format!("vehicle {} has mode probabilities outside [0, 1]", f.id)));
        }
    }
    Ok(())
}

fn build(fans: &[PredictionFan], modes: &[usize], probability: f64) -> Scenario {
    let mut assignment = BTreeMap::new();
    let mut trajectories = BTreeMap::new();
    for (f, &i) in fans.iter().zip(modes) {
        assignment.insert(f.id, PolicyMode::ALL[i]);
        trajectories.insert(f.id, f.modes[i].clone());
    }
    Scenario { assignment, probability, trajectories }
}

/// Depth-first walk over positive-probability modes in vehicle order and
/// mode-index order. Branches whose partial product falls below `cut` are
/// skipped: every remaining factor is at most 1, so no completion of such a
/// branch can reach the threshold.
fn walk(fans: &[PredictionFan], cut: f64, mut visit: impl FnMut(&[usize], f64) -> Result<()>) -> Result<()> {
    fn rec(
        fans: &[PredictionFan],
        depth: usize,
        prob: f64,
        cut: f64,
        stack: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize], f64) -> Result<()>,
    ) -> Result<()> {
        if depth == fans.len() {
            return visit(stack, prob);
        }
        for i in 0..M {
            let p = prob * fans[depth].mu[i];
            if p <= 0.0 || p < cut {
                continue;
            }
            stack.push(i);
            rec(fans, depth + 1, p, cut, stack, visit)?;
            stack.pop();
        }
        Ok(())
    }
    rec(fans, 0, 1.0, cut, &mut Vec::with_capacity(fans.len()), &mut visit)
}

/// Every positive-probability joint assignment with its product probability.
///
/// Errors when the number of assignments exceeds `cap`; use
/// [`prune_generate`] in that case, which never materialises the discarded
/// scenarios.
pub fn enumerate_scenarios(fans: &[PredictionFan], cap: usize) -> Result<Vec<Scenario>> {
    check_fans(fans)?;
    let count = fans
        .iter()
        .map(|f| f.mu.iter().filter(|&&p| p > 0.0).count())
        .try_fold(1usize, |acc, c| acc.checked_mul(c))
        .unwrap_or(usize::MAX);
    if count > cap {
        return Err(Error::ScenarioCap { count, cap });
    }
    let mut out = Vec::with_capacity(count);
    walk(fans, 0.0, |modes, p| {
        out.push(build(fans, modes, p));
        Ok(())
    })?;
    Ok(out)
}

/// Drops scenarios with probability below `threshold` and divides the
/// survivors by one minus the dropped mass.
pub fn filter_renormalize(scenarios: Vec<Scenario>, threshold: f64) -> Result<Vec<Scenario>> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidParameter(format!("scenario threshold must be non-negative, got {threshold}")));
    }
    let dropped: f64 = scenarios.iter().filter(|s| s.probability < threshold).map(|s| s.probability).sum();
    let kept: Vec<Scenario> = scenarios.into_iter().filter(|s| s.probability >= threshold).collect();
    if kept.is_empty() {
        return Err(Error::AllBelowThreshold(threshold));
    }
    let denom = 1.0 - dropped;
    Ok(kept
        .into_iter()
        .map(|mut s| {
            s.probability /= denom;
            s
        })
        .collect())
}

/// Threshold-first generation: identical survivors to
/// `filter_renormalize(enumerate_scenarios(..))` but without enumerating the
/// discarded assignments. Survivors are normalized by their own sum, which
/// equals one minus the dropped mass when the inputs are normalized.
pub fn prune_generate(fans: &[PredictionFan], threshold: f64, cap: usize) -> Result<Vec<Scenario>> {
    check_fans(fans)?;
    if !(threshold >= 0.0) {
        return Err(Error::InvalidParameter(format!("scenario threshold must be non-negative, got {threshold}")));
    }
    let mut picks: Vec<(Vec<usize>, f64)> = Vec::new();
    walk(fans, threshold, |modes, p| {
        if picks.len() == cap {
            return Err(Error::ScenarioCap { count: cap + 1, cap });
        }
        picks.push((modes.to_vec(), p));
        Ok(())
    })?;
    if picks.is_empty() {
        return Err(Error::AllBelowThreshold(threshold));
    }
    let total: f64 = picks.iter().map(|p| p.1).sum();
    Ok(picks.iter().map(|(modes, p)| build(fans, modes, p / total)).collect())
}

/// Braking trajectory of one lane's lead vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadBraking {
    /// `None` for the virtual lead vehicle of an empty lane.
    pub id: Option<u32>,
    pub length: f64,
    pub width: f64,
    pub trajectory: Vec<CommonState>,
}

/// Worst case: every lane's lead vehicle brakes at its minimum acceleration
/// over the whole horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseScenario {
    /// Indexed by lane slot (lane 1 first).
    pub leads: [LeadBraking; 3],
    /// Every vehicle currently ahead of the ego, nearest first. The
    /// controller selects from these by lateral overlap with its corridor.
    pub ahead: Vec<LeadBraking>,
}

impl WorstCaseScenario {
    pub fn lead(&self, lane: Lane) -> &LeadBraking {
        &self.leads[lane.slot()]
    }
}

/// State after braking from `x0` at `a_min` for time `t`, integrated exactly
/// through the standstill clamp.
pub fn braking_state(x0: &CommonState, a_min: f64, t: f64) -> CommonState {
    let v0 = x0.v_lon.max(0.0);
    let decel = -a_min;
    let t_stop = v0 / decel;
    let (p, v, a) = if t < t_stop {
        (x0.p_lon + v0 * t + 0.5 * a_min * t * t, v0 + a_min * t, a_min)
    } else {
        (x0.p_lon + v0 * v0 / (2.0 * decel), 0.0, 0.0)
    };
    CommonState::new(p, v, a, x0.p_lat, 0.0, 0.0)
}

/// `N + 1` samples of a braking trajectory at period `tp`.
pub fn braking_trajectory(x0: &CommonState, a_min: f64, n: usize, tp: f64) -> Vec<CommonState> {
    (0..=n).map(|k| braking_state(x0, a_min, k as f64 * tp)).collect()
}

/// Nearest vehicle ahead of the ego whose footprint touches `lane`, if any.
pub fn lead_in_lane(scene: &SceneSnapshot, lane: Lane) -> Option<&Vehicle> {
    let ego = &scene.ego.state;
    scene
        .targets
        .iter()
        .filter(|v| v.state.p_lon > ego.p_lon && scene.lanes.lanes_touched(v.state.p_lat, v.params.width).contains(&lane))
        .min_by(|a, b| a.state.p_lon.total_cmp(&b.state.p_lon).then(a.params.id.cmp(&b.params.id)))
}

/// Nearest vehicle behind (or level with) the ego whose footprint touches
/// `lane`, if any.
pub fn rear_in_lane(scene: &SceneSnapshot, lane: Lane) -> Option<&Vehicle> {
    let ego = &scene.ego.state;
    scene
        .targets
        .iter()
        .filter(|v| v.state.p_lon <= ego.p_lon && scene.lanes.lanes_touched(v.state.p_lat, v.params.width).contains(&lane))
        .max_by(|a, b| a.state.p_lon.total_cmp(&b.state.p_lon).then(b.params.id.cmp(&a.params.id)))
}

/// Braking trajectories of the lead vehicle of every lane; empty lanes get a
/// virtual lead vehicle far ahead at the ego's speed.
pub fn build_worst_case(scene: &SceneSnapshot, a_min: f64, n: usize, tp: f64) -> Result<WorstCaseScenario> {
    if !(a_min < 0.0) || !(tp > 0.0) {
        return Err(Error::InvalidParameter(format!("worst case needs a_min < 0 and tp > 0, got {a_min}, {tp}")));
    }
    let lanes: &LaneGeometry = &scene.lanes;
    let leads = Lane::ALL.map(|lane| match lead_in_lane(scene, lane) {
        Some(v) => braking_of(v, a_min, n, tp),
        None => {
            let mut virt = virtual_lead(&scene.ego.state);
            virt.p_lat = lanes.centerline(lane);
            LeadBraking {
                id: None,
                length: scene.ego.params.length,
                width: scene.ego.params.width,
                trajectory: braking_trajectory(&virt, a_min, n, tp),
            }
        }
    });
    let mut ahead: Vec<&Vehicle> = scene.targets.iter().filter(|v| v.state.p_lon > scene.ego.state.p_lon).collect();
    ahead.sort_by(|a, b| a.state.p_lon.total_cmp(&b.state.p_lon).then(a.params.id.cmp(&b.params.id)));
    let ahead = ahead.into_iter().map(|v| braking_of(v, a_min, n, tp)).collect();
    Ok(WorstCaseScenario { leads, ahead })
}

fn braking_of(v: &Vehicle, a_min: f64, n: usize, tp: f64) -> LeadBraking {
    LeadBraking {
        id: Some(v.params.id),
        length: v.params.length,
        width: v.params.width,
        trajectory: braking_trajectory(&v.state, a_min, n, tp),
    }
}
