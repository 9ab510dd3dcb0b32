//! Assembly of the condensed two-branch optimal control problem.
//!
//! Decision vector, for a horizon of `N` steps:
//!
//! ```text
//! [ u_lon(0..N) | u_lat(0..N) | ŭ_lon(0..N) | ŭ_lat(0..N) | s(0..N) ]
//! ```
//!
//! `u` is the nominal jerk sequence, `ŭ` the worst-case one, and `s_k ≥ 0`
//! relaxes the nominal gap rows of state `k + 1`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use super::condense::AxisPrediction;
use super::{ControlMode, ControllerConfig, ReferenceTrajectory};
use crate::error::{Error, Result};
use crate::imm::gap_requirement;
use crate::qp::{solve_qp, QpProblem, QpStatus};
use crate::scenario::{Scenario, WorstCaseScenario};
use crate::types::{CommonState, Lane, SceneSnapshot};

/// Assembled problem of one control mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Cftocp {
    pub mode: ControlMode,
    pub target_lane: Lane,
    pub horizon: usize,
    pub qp: QpProblem,
    /// Constant part of the cost, so that `cost = objective + constant`.
    pub cost_constant: f64,
    /// Set when a hard gap row is already violated by the current state; such
    /// a mode cannot be feasible and is not solved.
    pub deactivated: bool,
    /// Vehicles constraining the nominal branch ahead and behind, and the
    /// worst-case branch.
    pub front_ids: BTreeSet<u32>,
    pub rear_ids: BTreeSet<u32>,
    pub worst_ids: BTreeSet<u32>,
    /// Nominal lateral positions `k = 0..=N` used to select the vehicles of
    /// the nominal gap rows.
    pub planned_lat: Vec<f64>,
    soft_rows: Vec<(usize, usize)>,
}

struct Layout {
    n: usize,
}

impl Layout {
    fn u_lon(&self, k: usize) -> usize {
        k
    }
    fn u_lat(&self, k: usize) -> usize {
        self.n + k
    }
    fn w_lon(&self, k: usize) -> usize {
        2 * self.n + k
    }
    fn w_lat(&self, k: usize) -> usize {
        3 * self.n + k
    }
    fn slack(&self, k: usize) -> usize {
        4 * self.n + k
    }
    fn len(&self) -> usize {
        5 * self.n
    }
}

/// Sparse row `Σ coeff·z ≤ rhs` (or `=`).
struct Row {
    coeffs: Vec<(usize, f64)>,
    rhs: f64,
}

fn axis_row(pred: &AxisPrediction, k: usize, c: usize, offset: usize, scale: f64) -> Vec<(usize, f64)> {
    (0..k).map(|j| (offset + j, scale * pred.gamma(k, c, j))).collect()
}

fn add_scaled(into: &mut Vec<(usize, f64)>, other: Vec<(usize, f64)>) {
    for (j, v) in other {
        match into.iter_mut().find(|(i, _)| *i == j) {
            Some(e) => e.1 += v,
            None => into.push((j, v)),
        }
    }
}

/// State of a predicted trajectory at step `k`; beyond its end the last
/// state is extrapolated at constant velocity in the same lane.
pub(crate) fn sample(traj: &[CommonState], k: usize, tp: f64) -> CommonState {
    if k < traj.len() {
        return traj[k];
    }
    let last = traj[traj.len() - 1];
    let dt = (k + 1 - traj.len()) as f64 * tp;
    CommonState::new(last.p_lon + last.v_lon.max(0.0) * dt, last.v_lon.max(0.0), 0.0, last.p_lat, 0.0, 0.0)
}

/// Restriction of a problem to `vars`: the rows supported on them only.
fn subproblem(h: &DMatrix<f64>, g: &DVector<f64>, eq: &[Row], ineq: &[Row], lower: &DVector<f64>, upper: &DVector<f64>, vars: &[usize]) -> QpProblem {
    let mut local = vec![usize::MAX; g.len()];
    for (i, &v) in vars.iter().enumerate() {
        local[v] = i;
    }
    let pick = |rows: &[Row]| -> (DMatrix<f64>, DVector<f64>) {
        let kept: Vec<&Row> = rows.iter().filter(|r| r.coeffs.iter().all(|&(j, _)| local[j] != usize::MAX)).collect();
        let mut a = DMatrix::zeros(kept.len(), vars.len());
        let mut b = DVector::zeros(kept.len());
        for (i, r) in kept.iter().enumerate() {
            for &(j, v) in &r.coeffs {
                a[(i, local[j])] += v;
            }
            b[i] = r.rhs;
        }
        (a, b)
    };
    let (ae, be) = pick(eq);
    let (ai, bi) = pick(ineq);
    let hs = DMatrix::from_fn(vars.len(), vars.len(), |i, j| 0.5 * (h[(vars[i], vars[j])] + h[(vars[j], vars[i])]));
    let gs = DVector::from_fn(vars.len(), |i, _| g[vars[i]]);
    let lo = DVector::from_fn(vars.len(), |i, _| lower[vars[i]]);
    let hi = DVector::from_fn(vars.len(), |i, _| upper[vars[i]]);
    QpProblem::new(hs, gs).with_eq(ae, be).with_ineq(ai, bi).with_bounds(lo, hi)
}

fn overlaps(p_lat: f64, width: f64, lo: f64, hi: f64) -> bool {
    p_lat + 0.5 * width > lo && p_lat - 0.5 * width < hi
}

fn add_quadratic(h: &mut DMatrix<f64>, g: &mut DVector<f64>, coeffs: &[(usize, f64)], d: f64, q: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    for &(i, ci) in coeffs {
        g[i] += 2.0 * q * d * ci;
        for &(j, cj) in coeffs {
            h[(i, j)] += 2.0 * q * ci * cj;
        }
    }
    q * d * d
}

/// Builds the joint problem of both branches for one control mode.
///
/// The nominal branch keeps `p_k + τ·v_k ≤ p_j,k − Δd_j` for every vehicle
/// `j` ahead of the ego now whose predicted footprint at step `k` overlaps
/// the ego's planned lateral footprint at step `k`, in every scenario; lane
/// changes also keep `p_k ≥ p_r,k + τ·v_r,k + Δd_r` to vehicles behind that
/// overlap the planned footprint but not the current one. The worst-case
/// branch keeps `p̆_k ≤ p̆_j,k − Δd_j` to the braking trajectories of the
/// vehicles ahead whose footprint overlaps the whole corridor between the
/// current position and the target centerline, and ends at standstill on
/// the target centerline.
pub fn assemble_cftocp(
    mode: ControlMode,
    scene: &SceneSnapshot,
    scenarios: &[Scenario],
    worst: &WorstCaseScenario,
    reference: &ReferenceTrajectory,
    cfg: &ControllerConfig,
) -> Result<Cftocp> {
    let n = reference.states.len();
    if n == 0 {
        return Err(Error::Dimension("reference trajectory is empty".into()));
    }
    let lay = Layout { n };
    let nv = lay.len();
    let ego = &scene.ego;
    let x0 = ego.state;
    let lanes = &scene.lanes;
    let tp = cfg.tp;
    let lon = AxisPrediction::new(&x0.lon(), n, tp);
    let lat = AxisPrediction::new(&x0.lat(), n, tp);
    let target_lane = reference.target_lane;
    let center = lanes.centerline(target_lane);

    // Lateral corridor swept between the current position and the target
    // centerline.
    let half = 0.5 * ego.params.width + cfg.corridor_margin;
    let corr_lo = x0.p_lat.min(center) - half;
    let corr_hi = x0.p_lat.max(center) + half;

    // ---------------------------------------------------------------- cost
    let mut h = DMatrix::zeros(nv, nv);
    let mut g = DVector::zeros(nv);
    let mut constant = 0.0;
    for (k, r) in reference.states.iter().enumerate().map(|(i, r)| (i + 1, r)) {
        let rlon = [r.p_lon, r.v_lon, r.a_lon];
        let rlat = [r.p_lat, r.v_lat, r.a_lat];
        for c in 0..3 {
            let row = axis_row(&lon, k, c, lay.u_lon(0), 1.0);
            constant += add_quadratic(&mut h, &mut g, &row, lon.free[k][c] - rlon[c], cfg.q_bar[c]);
            let row = axis_row(&lat, k, c, lay.u_lat(0), 1.0);
            constant += add_quadratic(&mut h, &mut g, &row, lat.free[k][c] - rlat[c], cfg.q_bar[3 + c]);
        }
    }
    for k in 0..n {
        h[(lay.u_lon(k), lay.u_lon(k))] += 2.0 * cfg.r_bar[0];
        h[(lay.u_lat(k), lay.u_lat(k))] += 2.0 * cfg.r_bar[1];
        h[(lay.w_lon(k), lay.w_lon(k))] += 2.0 * cfg.worst_input_weight * cfg.r_bar[0];
        h[(lay.w_lat(k), lay.w_lat(k))] += 2.0 * cfg.worst_input_weight * cfg.r_bar[1];
        h[(lay.slack(k), lay.slack(k))] += 2.0 * cfg.slack_quadratic;
        g[lay.slack(k)] += cfg.slack_linear;
    }

    // ---------------------------------------------------------------- boxes
    let mut ineq: Vec<Row> = Vec::new();
    for (lon_off, lat_off) in [(lay.u_lon(0), lay.u_lat(0)), (lay.w_lon(0), lay.w_lat(0))] {
        for k in 1..=n {
            let mut le = |pred: &AxisPrediction, c: usize, off: usize, max: f64| {
                ineq.push(Row { coeffs: axis_row(pred, k, c, off, 1.0), rhs: max - pred.free[k][c] });
            };
            le(&lon, 2, lon_off, cfg.a_lon.max);
            le(&lat, 2, lat_off, cfg.a_lat.max);
            le(&lat, 0, lat_off, lanes.l_ub);
            if let Some(vmax) = cfg.v_max {
                le(&lon, 1, lon_off, vmax);
            }
            let mut ge = |pred: &AxisPrediction, c: usize, off: usize, min: f64| {
                ineq.push(Row { coeffs: axis_row(pred, k, c, off, -1.0), rhs: pred.free[k][c] - min });
            };
            ge(&lon, 2, lon_off, cfg.a_lon.min);
            ge(&lon, 1, lon_off, 0.0);
            ge(&lat, 2, lat_off, cfg.a_lat.min);
            ge(&lat, 0, lat_off, lanes.l_lb);
        }
    }

    // ---------------------------------------------------------------- worst-case gaps
    let mut worst_ids = BTreeSet::new();
    let mut deactivated = false;
    let relevant: Vec<_> = worst
        .ahead
        .iter()
        .filter(|l| overlaps(l.trajectory[0].p_lat, l.width, corr_lo, corr_hi))
        .collect();
    for l in &relevant {
        if l.trajectory.len() < n + 1 {
            return Err(Error::Dimension(format!("worst-case trajectory has {} samples, need {}", l.trajectory.len(), n + 1)));
        }
        let dd = gap_requirement(ego.params.length, l.length, cfg.gap_margin);
        if x0.p_lon > l.trajectory[0].p_lon - dd {
            deactivated = true;
        }
        if let Some(id) = l.id {
            worst_ids.insert(id);
        }
    }
    if !relevant.is_empty() {
        // The braking gap has curvature at most `-a_lon.min` (the braking
        // lead never accelerates), so this clearance at the samples keeps it
        // above the safety distance between them as well.
        let intersample = -cfg.a_lon.min * tp * tp / 8.0;
        for k in 1..=n {
            let bound = relevant
                .iter()
                .map(|l| l.trajectory[k].p_lon - gap_requirement(ego.params.length, l.length, cfg.gap_margin) - intersample)
                .fold(f64::INFINITY, f64::min);
            ineq.push(Row { coeffs: axis_row(&lon, k, 0, lay.w_lon(0), 1.0), rhs: bound - lon.free[k][0] });
        }
    }

    // ---------------------------------------------------------------- equalities
    let mut eq: Vec<Row> = vec![
        Row { coeffs: vec![(lay.u_lon(0), 1.0), (lay.w_lon(0), -1.0)], rhs: 0.0 },
        Row { coeffs: vec![(lay.u_lat(0), 1.0), (lay.w_lat(0), -1.0)], rhs: 0.0 },
    ];
    for (pred, c, off, value) in [(&lon, 1, lay.w_lon(0), 0.0), (&lon, 2, lay.w_lon(0), 0.0), (&lat, 0, lay.w_lat(0), center), (&lat, 1, lay.w_lat(0), 0.0), (&lat, 2, lay.w_lat(0), 0.0)] {
        eq.push(Row { coeffs: axis_row(pred, n, c, off, 1.0), rhs: value - pred.free[n][c] });
    }
    let mut lower = DVector::from_element(nv, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(nv, f64::INFINITY);
    for k in 0..n {
        for (idx, b) in [(lay.u_lon(k), cfg.j_lon), (lay.w_lon(k), cfg.j_lon), (lay.u_lat(k), cfg.j_lat), (lay.w_lat(k), cfg.j_lat)] {
            lower[idx] = b.min;
            upper[idx] = b.max;
        }
        lower[lay.slack(k)] = 0.0;
    }

    // ---------------------------------------------------------------- lateral plan
    // The lateral block shares no cost term or row with the longitudinal
    // one, so its optimum is the lateral part of the joint optimum. Solving it
    // first tells the nominal gap rows where the ego will be at every step.
    let lat_vars: Vec<usize> = (0..n).map(|k| lay.u_lat(k)).chain((0..n).map(|k| lay.w_lat(k))).collect();
    let lat_qp = subproblem(&h, &g, &eq, &ineq, &lower, &upper, &lat_vars);
    let lat_sol = solve_qp(&lat_qp)?;
    let lateral_feasible = lat_sol.status == QpStatus::Optimal;
    let planned_lat: Vec<f64> = if lateral_feasible {
        let u: Vec<f64> = (0..n).map(|k| lat_sol.x[k]).collect();
        (0..=n).map(|k| lat.eval(k, 0, &u)).collect()
    } else {
        (0..=n).map(|k| lat.free[k][0]).collect()
    };

    // ---------------------------------------------------------------- nominal gaps
    let mut soft_rows = Vec::new();
    let mut front_ids = BTreeSet::new();
    let mut rear_ids = BTreeSet::new();
    let is_change = matches!(mode, ControlMode::LaneChange(_));
    let now_lo = x0.p_lat - half;
    let now_hi = x0.p_lat + half;
    for k in 1..=n {
        let (lo, hi) = (planned_lat[k] - half, planned_lat[k] + half);
        let mut front = f64::INFINITY;
        let mut rear = f64::NEG_INFINITY;
        for s in scenarios {
            for (&id, traj) in &s.trajectories {
                let Some(tv) = scene.target(id) else { continue };
                let st = sample(traj, k, tp);
                if !overlaps(st.p_lat, tv.params.width, lo, hi) {
                    continue;
                }
                let dd = gap_requirement(ego.params.length, tv.params.length, cfg.gap_margin);
                if tv.state.p_lon > x0.p_lon {
                    front = front.min(st.p_lon - dd);
                    front_ids.insert(id);
                } else if is_change && !overlaps(tv.state.p_lat, tv.params.width, now_lo, now_hi) {
                    // Vehicles behind in the lane being entered.
                    rear = rear.max(st.p_lon + cfg.tau * st.v_lon.max(0.0) + dd);
                    rear_ids.insert(id);
                }
            }
        }
        if front.is_finite() {
            let mut c = axis_row(&lon, k, 0, lay.u_lon(0), 1.0);
            add_scaled(&mut c, axis_row(&lon, k, 1, lay.u_lon(0), cfg.tau));
            c.push((lay.slack(k - 1), -1.0));
            soft_rows.push((ineq.len(), lay.slack(k - 1)));
            ineq.push(Row { coeffs: c, rhs: front - lon.free[k][0] - cfg.tau * lon.free[k][1] });
        }
        if rear.is_finite() {
            let mut c = axis_row(&lon, k, 0, lay.u_lon(0), -1.0);
            c.push((lay.slack(k - 1), -1.0));
            soft_rows.push((ineq.len(), lay.slack(k - 1)));
            ineq.push(Row { coeffs: c, rhs: lon.free[k][0] - rear });
        }
    }

    let dense = |rows: &[Row]| {
        let mut a = DMatrix::zeros(rows.len(), nv);
        let mut b = DVector::zeros(rows.len());
        for (i, r) in rows.iter().enumerate() {
            for &(j, v) in &r.coeffs {
                a[(i, j)] += v;
            }
            b[i] = r.rhs;
        }
        (a, b)
    };
    let (a_eq, b_eq) = dense(&eq);
    let (a_in, b_in) = dense(&ineq);
    // Symmetrize against round-off in the accumulated outer products.
    let h = (&h + h.transpose()) * 0.5;
    let qp = QpProblem::new(h, g).with_eq(a_eq, b_eq).with_ineq(a_in, b_in).with_bounds(lower, upper);
    Ok(Cftocp {
        mode,
        target_lane,
        horizon: n,
        qp,
        cost_constant: constant,
        deactivated: deactivated || !lateral_feasible,
        front_ids,
        rear_ids,
        worst_ids,
        planned_lat,
        soft_rows,
    })
}

impl Cftocp {
    /// Full cost of a decision vector.
    pub fn cost(&self, z: &DVector<f64>) -> f64 {
        self.qp.objective(z) + self.cost_constant
    }

    /// Splits a decision vector into nominal and worst-case jerk pairs.
    pub fn unpack(&self, z: &DVector<f64>) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
        let lay = Layout { n: self.horizon };
        let nominal = (0..self.horizon).map(|k| [z[lay.u_lon(k)], z[lay.u_lat(k)]]).collect();
        let worst = (0..self.horizon).map(|k| [z[lay.w_lon(k)], z[lay.w_lat(k)]]).collect();
        (nominal, worst)
    }

    /// Decision vector using `inputs` (padded with zeros or truncated to the
    /// horizon) for both branches, with the smallest slacks that satisfy the
    /// nominal gap rows.
    pub fn candidate(&self, inputs: &[[f64; 2]]) -> DVector<f64> {
        let lay = Layout { n: self.horizon };
        let mut z = DVector::zeros(lay.len());
        for k in 0..self.horizon {
            let u = inputs.get(k).copied().unwrap_or([0.0, 0.0]);
            z[lay.u_lon(k)] = u[0];
            z[lay.u_lat(k)] = u[1];
            z[lay.w_lon(k)] = u[0];
            z[lay.w_lat(k)] = u[1];
        }
        for &(row, s) in &self.soft_rows {
            let r = self.qp.a_ineq.row(row).dot(&z.transpose()) - self.qp.b_ineq[row];
            if r > 0.0 {
                z[s] += r;
            }
        }
        z
    }

    /// Largest constraint violation of `z`.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        self.qp.max_violation(z)
    }

    /// Number of decision variables and of equality / inequality rows.
    pub fn dimensions(&self) -> (usize, usize, usize) {
        (self.qp.n(), self.qp.a_eq.nrows(), self.qp.a_ineq.nrows())
    }
}
