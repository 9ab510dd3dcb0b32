//! No-collision projection of a predicted trajectory against the
//! predictions of higher-priority vehicles.
//!
//! The follower's current longitudinal estimate is perturbed by the smallest
//! `δ = (Δp, Δv, Δa)` (weighted least squares) such that the re-propagated
//! prediction keeps every same-lane gap to a leader ahead at or above the
//! safety distance. Because the dynamics are affine, the propagated position
//! at step `k` is `p_k + S_k[0]·δ` with `S_k` the longitudinal sensitivity,
//! so the problem is a small QP. When a leader's two most probable modes aim
//! at different lanes, the rows implied by the runner-up hypothesis are
//! guarded by a binary that may switch them off at a probability-weighted
//! penalty, giving a small MIQP.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::qp::{solve_miqp, MiqpProblem, QpProblem, QpStatus};
use crate::types::{CommonState, LaneGeometry, Vector7};

/// Prediction of one higher-priority vehicle on the follower's time grid.
#[derive(Debug, Clone, Copy)]
pub struct LeaderTrack<'a> {
    pub id: u32,
    pub length: f64,
    pub fused: &'a [CommonState],
    /// Trajectory and probability of the runner-up mode when its lane
    /// differs from the most probable one.
    pub alternative: Option<(&'a [CommonState], f64)>,
}

/// Tunables of the projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionSettings {
    /// Diagonal objective weights on (Δp, Δv, Δa).
    pub weights: [f64; 3],
    /// Penalty scale for switching off a runner-up hypothesis.
    pub penalty: f64,
    pub big_m: f64,
    /// Extra gap beyond half the summed vehicle lengths.
    pub margin: f64,
    /// Constraints are checked every `stride` prediction steps.
    pub stride: usize,
}

impl Default for ProjectionSettings {
    fn default() -> Self {
        Self { weights: [1.0; 3], penalty: 10.0, big_m: 1e3, margin: 0.0, stride: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionStatus {
    /// Prediction already gap-feasible; nothing changed.
    Inactive,
    /// A non-zero correction was applied.
    Projected,
    /// Overlap at the current instant or no feasible correction; the
    /// estimate is returned unchanged and the case is reported.
    Flagged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub delta: Vector3<f64>,
    pub status: ProjectionStatus,
    /// Binary choices (1 = runner-up hypothesis respected), one per guarded leader.
    pub assignment: Vec<u8>,
}

impl Projection {
    fn unchanged(status: ProjectionStatus) -> Self {
        Self { delta: Vector3::zeros(), status, assignment: Vec::new() }
    }

    /// Applies the correction to a predicted trajectory.
    pub fn apply(&self, states: &[Vector7], sensitivity: &[Matrix3<f64>]) -> Vec<Vector7> {
        states
            .iter()
            .zip(sensitivity)
            .map(|(z, s)| {
                let mut z = *z;
                let d = s * self.delta;
                z[0] += d[0];
                z[1] += d[1];
                z[2] += d[2];
                z
            })
            .collect()
    }
}

/// Safety distance between two vehicles referenced at their centres.
pub fn gap_requirement(len_a: f64, len_b: f64, margin: f64) -> f64 {
    0.5 * (len_a + len_b) + margin
}

/// Projects one mode's prediction; `states[0]` is the current estimate.
pub fn project_no_collision(
    states: &[Vector7],
    sensitivity: &[Matrix3<f64>],
    length: f64,
    leaders: &[LeaderTrack<'_>],
    lanes: &LaneGeometry,
    settings: &ProjectionSettings,
) -> Result<Projection> {
    let p0 = states[0][0];
    let lane_at = |z: &Vector7| lanes.lane_of_clamped(z[4]);
    let mut rows: Vec<([f64; 3], f64)> = Vec::new();
    // (leader index in `guarded`, row coefficients, rhs without the big-M)
    let mut guarded_rows: Vec<(usize, [f64; 3], f64)> = Vec::new();
    let mut guarded_mu: Vec<f64> = Vec::new();
    let last = states.len() - 1;
    let stride = settings.stride.max(1);
    for l in leaders {
        if l.fused[0].p_lon <= p0 {
            continue;
        }
        let dd = gap_requirement(length, l.length, settings.margin);
        if lanes.lane_of_clamped(l.fused[0].p_lat) == lane_at(&states[0]) && l.fused[0].p_lon - p0 < dd {
            return Ok(Projection::unchanged(ProjectionStatus::Flagged));
        }
        let guard = l.alternative.map(|(traj, mu)| {
            guarded_mu.push(mu);
            (guarded_mu.len() - 1, traj)
        });
        let mut k = stride;
        while k <= last {
            let s = sensitivity[k].row(0);
            let coeff = [s[0], s[1], s[2]];
            let lane = lane_at(&states[k]);
            if k < l.fused.len() && lanes.lane_of_clamped(l.fused[k].p_lat) == lane {
                rows.push((coeff, l.fused[k].p_lon - dd - states[k][0]));
            }
            if let Some((g, traj)) = guard {
                if k < traj.len() && lanes.lane_of_clamped(traj[k].p_lat) == lane {
                    guarded_rows.push((g, coeff, traj[k].p_lon - dd - states[k][0]));
                }
            }
            k += stride;
        }
    }
    // Drop guards that generate no rows.
    let used: Vec<usize> = {
        let mut u: Vec<usize> = guarded_rows.iter().map(|r| r.0).collect();
        u.sort_unstable();
        u.dedup();
        u
    };
    let feasible_now = rows.iter().all(|r| r.1 >= 0.0) && guarded_rows.iter().all(|r| r.2 >= 0.0);
    if feasible_now {
        return Ok(Projection { assignment: vec![1; used.len()], ..Projection::unchanged(ProjectionStatus::Inactive) });
    }
    let nb = used.len();
    let n = 3 + nb;
    let m = rows.len() + guarded_rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for (i, (c, rhs)) in rows.iter().enumerate() {
        for j in 0..3 {
            a[(i, j)] = c[j];
        }
        b[i] = *rhs;
    }
    for (r, (g, c, rhs)) in guarded_rows.iter().enumerate() {
        let i = rows.len() + r;
        for j in 0..3 {
            a[(i, j)] = c[j];
        }
        let col = 3 + used.iter().position(|u| u == g).expect("guard used");
        // Row holds when s = 1 and is relaxed by big-M when s = 0.
        a[(i, col)] = settings.big_m;
        b[i] = rhs + settings.big_m;
    }
    let mut h = DMatrix::zeros(n, n);
    for j in 0..3 {
        h[(j, j)] = settings.weights[j];
    }
    let mut g = DVector::zeros(n);
    let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n, f64::INFINITY);
    for (k, &gi) in used.iter().enumerate() {
        h[(3 + k, 3 + k)] = 1e-9;
        g[3 + k] = -settings.penalty * guarded_mu[gi];
        lower[3 + k] = 0.0;
        upper[3 + k] = 1.0;
    }
    let problem = QpProblem::new(h, g).with_ineq(a, b).with_bounds(lower, upper);
    let sol = solve_miqp(&MiqpProblem::new(problem, (3..n).collect()))?;
    if sol.qp.status != QpStatus::Optimal {
        return Ok(Projection::unchanged(ProjectionStatus::Flagged));
    }
    let delta = Vector3::new(sol.qp.x[0], sol.qp.x[1], sol.qp.x[2]);
    Ok(Projection { delta, status: ProjectionStatus::Projected, assignment: sol.assignment })
}
