//! Per-vehicle filter banks and the priority-ordered multi-vehicle tracker.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SMatrix};

use super::filter::{apply_floor, fuse, gaussian_log_likelihood, kf_step, mix, update_probabilities};
use super::predict::{constant_velocity, predict_mode, LeadSource};
use super::projection::{gap_requirement, project_no_collision, LeaderTrack, ProjectionStatus};
use super::{ImmConfig, PredictionFan};
use crate::error::{Error, Result};
use crate::policy::{build_mode_dynamics, virtual_lead, GainSet};
use crate::types::{
    CommonState, FullState, Lane, LaneGeometry, Longitudinal, PolicyMode, SceneSnapshot, Vector7, VehicleParams,
    COMMON_IN_FULL, M, R_REF_INDEX,
};

type Matrix7 = SMatrix<f64, 7, 7>;

/// Estimate of one mode-matched filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBelief {
    pub mode: PolicyMode,
    pub z: Vector7,
    pub p: Matrix7,
    pub mu: f64,
}

impl ModeBelief {
    fn common_mean(&self) -> DVector<f64> {
        DVector::from_iterator(6, COMMON_IN_FULL.iter().map(|&i| self.z[i]))
    }

    fn common_cov(&self) -> DMatrix<f64> {
        DMatrix::from_fn(6, 6, |r, c| self.p[(COMMON_IN_FULL[r], COMMON_IN_FULL[c])])
    }
}

/// Ordering of all vehicles (ego included) for sequential prediction.
///
/// Vehicles are queued per current lane, front to back. The queues are then
/// merged by repeatedly taking the head with the largest constant-velocity
/// position after `horizon` seconds, so a vehicle is never ordered before
/// one in front of it in its own lane. Ties go to the lower id.
pub fn priority_order(scene: &SceneSnapshot, horizon: f64) -> Vec<u32> {
    let mut queues: [Vec<(u32, CommonState)>; 3] = Default::default();
    for v in std::iter::once(&scene.ego).chain(&scene.targets) {
        queues[scene.lanes.lane_of_clamped(v.state.p_lat).slot()].push((v.params.id, v.state));
    }
    for q in queues.iter_mut() {
        q.sort_by(|a, b| b.1.p_lon.total_cmp(&a.1.p_lon).then(a.0.cmp(&b.0)));
        q.reverse();
    }
    let mut order = Vec::new();
    loop {
        let mut best: Option<(usize, f64, u32)> = None;
        for (slot, q) in queues.iter().enumerate() {
            if let Some(&(id, s)) = q.last() {
                let end = s.p_lon + s.v_lon * horizon;
                let better = match best {
                    None => true,
                    Some((_, e, bid)) => end > e || (end == e && id < bid),
                };
                if better {
                    best = Some((slot, end, id));
                }
            }
        }
        match best {
            None => break,
            Some((slot, _, id)) => {
                queues[slot].pop();
                order.push(id);
            }
        }
    }
    order
}

/// Filter bank and latest predictions of one target vehicle.
#[derive(Debug, Clone)]
pub struct VehicleFilter {
    pub params: VehicleParams,
    pub beliefs: Vec<ModeBelief>,
    pub fused_mean: CommonState,
    pub fused_cov: Matrix6<f64>,
    /// Projected per-mode predictions on the filter grid.
    pub fine_modes: Vec<Vec<CommonState>>,
    /// Fused prediction on the filter grid, clamped behind leaders.
    pub fine_fused: Vec<CommonState>,
    pub statuses: [ProjectionStatus; M],
    pub log_likelihoods: [f64; M],
    /// Predicted probabilities of the last mixing step.
    pub c: [f64; M],
    initialized: bool,
}

/// Everything a bank needs from the rest of the scene for one cycle.
pub(crate) struct CycleContext<'a> {
    pub gains: &'a GainSet,
    pub cfg: &'a ImmConfig,
    pub pi: &'a DMatrix<f64>,
    pub lanes: &'a LaneGeometry,
    pub dt: f64,
    pub n_fine: usize,
    /// Lead vehicle per lane: previous and current measurement and the
    /// predicted trajectory on the filter grid.
    pub lead_prev: [Option<CommonState>; 3],
    pub lead_now: [Option<CommonState>; 3],
    pub lead_track: [Option<&'a [CommonState]>; 3],
    pub leaders: &'a [LeaderTrack<'a>],
}

impl VehicleFilter {
    pub fn new(params: VehicleParams) -> Self {
        Self {
            params,
            beliefs: Vec::new(),
            fused_mean: CommonState::default(),
            fused_cov: Matrix6::zeros(),
            fine_modes: Vec::new(),
            fine_fused: Vec::new(),
            statuses: [ProjectionStatus::Inactive; M],
            log_likelihoods: [0.0; M],
            c: [1.0 / M as f64; M],
            initialized: false,
        }
    }

    pub fn mu(&self) -> [f64; M] {
        let mut mu = [0.0; M];
        for (m, b) in mu.iter_mut().zip(&self.beliefs) {
            *m = b.mu;
        }
        mu
    }

    fn measurement(y: &CommonState, mode: PolicyMode, lead_now: &[Option<CommonState>; 3]) -> Vector7 {
        let r = match mode.longitudinal {
            Longitudinal::VT => y.v_lon,
            Longitudinal::DK => {
                let lv = lead_now[mode.target_lane.slot()].unwrap_or_else(|| virtual_lead(y));
                (lv.p_lon - y.p_lon) / lv.v_lon.max(1.0)
            }
        };
        FullState { common: *y, r_ref: r }.to_vector()
    }

    /// One filter tick with measurement `y`.
    pub(crate) fn cycle(&mut self, y: &CommonState, ctx: &CycleContext<'_>) -> Result<()> {
        let mut residuals: Vec<Option<(DVector<f64>, DMatrix<f64>)>> = vec![None; M];
        if !self.initialized {
            self.beliefs = PolicyMode::ALL
                .iter()
                .map(|&mode| {
                    let z = Self::measurement(y, mode, &ctx.lead_now);
                    let r = ctx.cfg.measurement_noise(mode);
                    ModeBelief { mode, z, p: Matrix7::from_iterator(r.iter().copied()), mu: 1.0 / M as f64 }
                })
                .collect();
            self.initialized = true;
        } else {
            let mu = self.mu();
            let means: Vec<DVector<f64>> = self.beliefs.iter().map(ModeBelief::common_mean).collect();
            let covs: Vec<DMatrix<f64>> = self.beliefs.iter().map(ModeBelief::common_cov).collect();
            let mixed = mix(&mu, ctx.pi, &means, &covs);
            for (i, b) in self.beliefs.iter_mut().enumerate() {
                self.c[i] = mixed.c[i];
                let mut z = DVector::zeros(7);
                let mut p = DMatrix::zeros(7, 7);
                for (r, &fr) in COMMON_IN_FULL.iter().enumerate() {
                    z[fr] = mixed.means[i][r];
                    for (c, &fc) in COMMON_IN_FULL.iter().enumerate() {
                        p[(fr, fc)] = mixed.covs[i][(r, c)];
                    }
                }
                z[R_REF_INDEX] = b.z[R_REF_INDEX];
                p[(R_REF_INDEX, R_REF_INDEX)] = b.p[(R_REF_INDEX, R_REF_INDEX)];
                let lv = match b.mode.longitudinal {
                    Longitudinal::VT => None,
                    Longitudinal::DK => {
                        let slot = b.mode.target_lane.slot();
                        Some(ctx.lead_prev[slot].unwrap_or_else(|| {
                            virtual_lead(&FullState::from_vector(&Vector7::from_iterator(z.iter().copied())).common)
                        }))
                    }
                };
                let d = build_mode_dynamics(b.mode, ctx.gains, ctx.dt, ctx.lanes, lv.as_ref())?;
                let f = DMatrix::from_iterator(7, 7, d.f.iter().copied());
                let e = DVector::from_iterator(7, d.e.iter().copied());
                let yv = Self::measurement(y, b.mode, &ctx.lead_now);
                let yv = DVector::from_iterator(7, yv.iter().copied());
                let step = kf_step(
                    &z,
                    &p,
                    &f,
                    &e,
                    &ctx.cfg.process_noise(b.mode),
                    &yv,
                    &ctx.cfg.measurement_noise(b.mode),
                )?;
                b.z = Vector7::from_iterator(step.mean.iter().copied());
                b.p = Matrix7::from_iterator(step.cov.iter().copied());
                let res = DVector::from_iterator(6, COMMON_IN_FULL.iter().map(|&k| step.residual[k]));
                let s = DMatrix::from_fn(6, 6, |r, c| step.residual_cov[(COMMON_IN_FULL[r], COMMON_IN_FULL[c])]);
                residuals[i] = Some((res, s));
            }
        }

        // Horizon predictions and projections per mode.
        let mut deltas = Vec::with_capacity(M);
        self.fine_modes.clear();
        for (i, b) in self.beliefs.iter().enumerate() {
            let lead = match ctx.lead_track[b.mode.target_lane.slot()] {
                Some(t) => LeadSource::Track(t),
                None => LeadSource::Virtual,
            };
            let pred = predict_mode(&b.z, b.mode, ctx.gains, ctx.dt, ctx.lanes, lead, ctx.n_fine)?;
            let proj = project_no_collision(
                &pred.states,
                &pred.sensitivity,
                self.params.length,
                ctx.leaders,
                ctx.lanes,
                &ctx.cfg.projection,
            )?;
            self.statuses[i] = proj.status;
            let states = proj.apply(&pred.states, &pred.sensitivity);
            self.fine_modes.push(states.iter().map(|z| FullState::from_vector(z).common).collect());
            deltas.push(proj.delta);
        }

        if residuals.iter().all(Option::is_some) {
            let mut ll = [0.0; M];
            for (i, b) in self.beliefs.iter().enumerate() {
                let (res, s) = residuals[i].as_ref().expect("checked");
                let p_lon = Matrix3::from_fn(|r, c| b.p[(r, c)]) + Matrix3::identity() * ctx.cfg.projection_eps;
                let aug = DVector::from_iterator(3, deltas[i].iter().map(|d| -d));
                let aug_cov = DMatrix::from_iterator(3, 3, p_lon.iter().copied());
                ll[i] = gaussian_log_likelihood(res, s)? + gaussian_log_likelihood(&aug, &aug_cov)?;
            }
            self.log_likelihoods = ll;
            let mut mu = update_probabilities(&ll, &self.c);
            apply_floor(&mut mu, ctx.cfg.mu_floor);
            for (b, m) in self.beliefs.iter_mut().zip(mu) {
                b.mu = m;
            }
        }

        // Fused estimate and fused prediction.
        let mu = self.mu();
        let means: Vec<DVector<f64>> = self.beliefs.iter().map(ModeBelief::common_mean).collect();
        let covs: Vec<DMatrix<f64>> = self.beliefs.iter().map(ModeBelief::common_cov).collect();
        let (x, p) = fuse(&means, &covs, &mu);
        self.fused_mean = CommonState::new(x[0], x[1], x[2], x[3], x[4], x[5]);
        self.fused_cov = Matrix6::from_iterator(p.iter().copied());
        let n = ctx.n_fine + 1;
        let mut fused = Vec::with_capacity(n);
        for k in 0..n {
            let mut v = nalgebra::Vector6::zeros();
            for (traj, &w) in self.fine_modes.iter().zip(&mu) {
                v += traj[k].to_vector() * w;
            }
            fused.push(CommonState::from_vector(&v));
        }
        clamp_behind_leaders(&mut fused, self.params.length, ctx.leaders, ctx.lanes, ctx.cfg.projection.margin);
        self.fine_fused = fused;
        Ok(())
    }

    /// Predictions sampled every `stride` filter steps.
    pub fn fan(&self, stride: usize) -> PredictionFan {
        let sample = |t: &[CommonState]| t.iter().step_by(stride).copied().collect::<Vec<_>>();
        PredictionFan {
            id: self.params.id,
            mu: self.mu(),
            modes: self.fine_modes.iter().map(|t| sample(t)).collect(),
            fused: sample(&self.fine_fused),
        }
    }
}

/// Pulls a fused prediction back wherever it would close within the
/// safety distance of a same-lane leader that starts ahead of it.
fn clamp_behind_leaders(traj: &mut [CommonState], length: f64, leaders: &[LeaderTrack<'_>], lanes: &LaneGeometry, margin: f64) {
    let p0 = traj[0].p_lon;
    for l in leaders {
        if l.fused[0].p_lon <= p0 {
            continue;
        }
        let dd = gap_requirement(length, l.length, margin);
        if l.fused[0].p_lon - p0 < dd && lanes.lane_of_clamped(l.fused[0].p_lat) == lanes.lane_of_clamped(traj[0].p_lat) {
            continue;
        }
        for k in 1..traj.len().min(l.fused.len()) {
            if lanes.lane_of_clamped(l.fused[k].p_lat) == lanes.lane_of_clamped(traj[k].p_lat) {
                let cap = l.fused[k].p_lon - dd;
                if traj[k].p_lon > cap {
                    traj[k].p_lon = cap;
                }
            }
        }
    }
}

/// Priority-ordered predictor over all target vehicles of a scene.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub cfg: ImmConfig,
    pub gains: GainSet,
    pub lanes: LaneGeometry,
    /// Filter period.
    pub dt: f64,
    /// Filter steps per prediction sample (control period / filter period).
    pub stride: usize,
    /// Prediction horizon in samples.
    pub horizon: usize,
    pi: DMatrix<f64>,
    pub filters: BTreeMap<u32, VehicleFilter>,
    prev: BTreeMap<u32, CommonState>,
    /// Processing order of the last step (ego included).
    pub order: Vec<u32>,
    /// Predictions of the ego vehicle and every target on the filter grid.
    pub fine: BTreeMap<u32, Vec<CommonState>>,
}

impl Tracker {
    pub fn new(cfg: ImmConfig, gains: GainSet, lanes: LaneGeometry, dt: f64, stride: usize, horizon: usize) -> Result<Self> {
        cfg.validate()?;
        if !(dt > 0.0) || stride == 0 || horizon == 0 {
            return Err(Error::InvalidParameter("tracker needs dt > 0, stride ≥ 1 and horizon ≥ 1".into()));
        }
        let pi = cfg.transition_matrix()?.to_dmatrix();
        Ok(Self {
            cfg,
            gains,
            lanes,
            dt,
            stride,
            horizon,
            pi,
            filters: BTreeMap::new(),
            prev: BTreeMap::new(),
            order: Vec::new(),
            fine: BTreeMap::new(),
        })
    }

    /// Runs one filter tick on measured states.
    pub fn step(&mut self, scene: &SceneSnapshot) -> Result<()> {
        let n_fine = self.horizon * self.stride;
        let order = priority_order(scene, n_fine as f64 * self.dt);
        let ego_id = scene.ego.params.id;
        self.filters.retain(|id, _| scene.target(*id).is_some());
        let current: BTreeMap<u32, CommonState> =
            std::iter::once(&scene.ego).chain(&scene.targets).map(|v| (v.params.id, v.state)).collect();
        let lengths: BTreeMap<u32, f64> =
            std::iter::once(&scene.ego).chain(&scene.targets).map(|v| (v.params.id, v.params.length)).collect();
        let mut fine: BTreeMap<u32, Vec<CommonState>> = BTreeMap::new();
        let mut done: Vec<u32> = Vec::with_capacity(order.len());
        for &id in &order {
            if id == ego_id {
                fine.insert(id, constant_velocity(&scene.ego.state, self.dt, n_fine));
                done.push(id);
                continue;
            }
            let v = scene.target(id).expect("ordered ids come from the scene");
            let mut filter = self.filters.remove(&id).unwrap_or_else(|| VehicleFilter::new(v.params));
            let me = v.state;
            let mut lead_id: [Option<u32>; 3] = [None; 3];
            for lane in Lane::ALL {
                lead_id[lane.slot()] = done
                    .iter()
                    .copied()
                    .filter(|d| {
                        let s = current[d];
                        s.p_lon > me.p_lon && self.lanes.lane_of_clamped(s.p_lat) == lane
                    })
                    .min_by(|a, b| current[a].p_lon.total_cmp(&current[b].p_lon).then(a.cmp(b)));
            }
            let lead_now = lead_id.map(|o| o.map(|i| current[&i]));
            let lead_prev = lead_id.map(|o| o.map(|i| self.prev.get(&i).copied().unwrap_or(current[&i])));
            let lead_track = lead_id.map(|o| o.map(|i| fine[&i].as_slice()));
            let leaders: Vec<LeaderTrack<'_>> = done
                .iter()
                .map(|d| {
                    let alternative = self.filters.get(d).and_then(|f| {
                        let fan_mu = f.mu();
                        let mut idx: Vec<usize> = (0..M).collect();
                        idx.sort_by(|&a, &b| fan_mu[b].total_cmp(&fan_mu[a]).then(a.cmp(&b)));
                        let (first, second) = (PolicyMode::ALL[idx[0]], PolicyMode::ALL[idx[1]]);
                        (first.target_lane != second.target_lane && !f.fine_modes.is_empty())
                            .then(|| (f.fine_modes[idx[1]].as_slice(), fan_mu[idx[1]]))
                    });
                    LeaderTrack { id: *d, length: lengths[d], fused: fine[d].as_slice(), alternative }
                })
                .collect();
            let ctx = CycleContext {
                gains: &self.gains,
                cfg: &self.cfg,
                pi: &self.pi,
                lanes: &self.lanes,
                dt: self.dt,
                n_fine,
                lead_prev,
                lead_now,
                lead_track,
                leaders: &leaders,
            };
            filter.cycle(&me, &ctx)?;
            drop(leaders);
            fine.insert(id, filter.fine_fused.clone());
            self.filters.insert(id, filter);
            done.push(id);
        }
        self.prev = current;
        self.order = order;
        self.fine = fine;
        Ok(())
    }

    /// Prediction fans of all target vehicles, in priority order.
    pub fn fans(&self) -> Vec<PredictionFan> {
        self.order.iter().filter_map(|id| self.filters.get(id)).map(|f| f.fan(self.stride)).collect()
    }

    /// Projections that could not be resolved in the last step.
    pub fn flagged(&self) -> Vec<(u32, PolicyMode)> {
        let mut out = Vec::new();
        for (id, f) in &self.filters {
            for (i, s) in f.statuses.iter().enumerate() {
                if *s == ProjectionStatus::Flagged {
                    out.push((*id, PolicyMode::ALL[i]));
                }
            }
        }
        out
    }
}
