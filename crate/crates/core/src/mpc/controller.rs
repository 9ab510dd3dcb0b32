//! Per-mode solves, the mode decision and the receding-horizon controller.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::problem::{assemble_cftocp, Cftocp};
use super::{build_reference_at, ControlMode, ControllerConfig, ReferenceSpeed};
use crate::error::Result;
use crate::par;
use crate::qp::{solve_qp_warm, QpSolution, QpStatus, WarmStart};
use crate::scenario::{build_worst_case, Scenario};
use crate::types::{Lane, SceneSnapshot};

/// Constraint tolerance used to accept solutions and shifted candidates.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Outcome of one control mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    pub mode: ControlMode,
    pub target_lane: Lane,
    pub feasible: bool,
    /// The mode was ruled out before solving (a hard gap is already
    /// violated by the current state).
    pub deactivated: bool,
    /// `+∞` unless feasible.
    pub cost: f64,
    pub u_nominal: Vec<[f64; 2]>,
    pub u_worst: Vec<[f64; 2]>,
    pub iterations: usize,
    /// Active inequality rows at the optimum (including bounds).
    pub active: usize,
    pub status: Option<QpStatus>,
}

impl ControlSolution {
    /// Cost with infeasible modes mapped to `sentinel` for logging.
    pub fn logged_cost(&self, sentinel: f64) -> f64 {
        if self.feasible {
            self.cost
        } else {
            sentinel
        }
    }

    fn infeasible(p: &Cftocp, status: Option<QpStatus>, iterations: usize) -> Self {
        Self {
            mode: p.mode,
            target_lane: p.target_lane,
            feasible: false,
            deactivated: p.deactivated,
            cost: f64::INFINITY,
            u_nominal: Vec::new(),
            u_worst: Vec::new(),
            iterations,
            active: 0,
            status,
        }
    }
}

/// Solves one assembled mode. Iteration-capped and infeasible solves are
/// both reported as infeasible.
pub fn solve_control_mode(problem: &Cftocp, warm: Option<&DVector<f64>>) -> Result<ControlSolution> {
    if problem.deactivated {
        return Ok(ControlSolution::infeasible(problem, None, 0));
    }
    let ws = WarmStart { x: warm.cloned(), active: Vec::new() };
    let sol: QpSolution = solve_qp_warm(&problem.qp, &ws)?;
    if sol.status != QpStatus::Optimal || problem.max_violation(&sol.x) > FEASIBILITY_TOL {
        return Ok(ControlSolution::infeasible(problem, Some(sol.status), sol.iterations));
    }
    let (mut u_nominal, u_worst) = problem.unpack(&sol.x);
    // The coupling row holds to round-off; make the shared input identical.
    u_nominal[0] = u_worst[0];
    Ok(ControlSolution {
        mode: problem.mode,
        target_lane: problem.target_lane,
        feasible: true,
        deactivated: false,
        cost: problem.cost(&sol.x),
        u_nominal,
        u_worst,
        iterations: sol.iterations,
        active: sol.active.len(),
        status: Some(sol.status),
    })
}

/// Index of the feasible solution of least cost; earlier entries win ties,
/// so lane keeping (listed first) is preferred on equal costs.
pub fn decide(solutions: &[ControlSolution]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in solutions.iter().enumerate() {
        if s.feasible && best.is_none_or(|b| s.cost < solutions[b].cost) {
            best = Some(i);
        }
    }
    best
}

/// Result of re-checking the shifted previous worst-case plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftCheck {
    pub target_lane: Lane,
    pub passed: bool,
    pub max_violation: f64,
}

/// Everything decided at one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub input: [f64; 2],
    /// `None` when no mode was feasible and the emergency brake was applied.
    pub mode: Option<ControlMode>,
    pub target_lane: Option<Lane>,
    pub horizon: usize,
    pub solutions: Vec<ControlSolution>,
    pub emergency: bool,
    pub shift: Option<ShiftCheck>,
}

#[derive(Debug, Clone, PartialEq)]
struct Previous {
    target_lane: Lane,
    worst: Vec<[f64; 2]>,
    horizon: usize,
}

/// Receding-horizon controller holding warm-start state between steps.
#[derive(Debug, Clone)]
pub struct Controller {
    pub cfg: ControllerConfig,
    prev: Option<Previous>,
    initial_speed: Option<f64>,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, prev: None, initial_speed: None })
    }

    /// Forgets the previous plan and the recorded initial speed.
    pub fn reset(&mut self) {
        self.prev = None;
        self.initial_speed = None;
    }

    /// Horizon for the current ego state: enough to stop, at least the
    /// configured minimum, and at most one step shorter than the last one so
    /// the shifted plan still fits.
    pub fn horizon_for(&self, scene: &SceneSnapshot) -> usize {
        let x = &scene.ego.state;
        let n = self.cfg.required_horizon(x.v_lon, x.a_lon);
        match &self.prev {
            Some(p) => n.max(p.horizon.saturating_sub(1)),
            None => n,
        }
    }

    /// Assembles every available mode for `scene`.
    pub fn assemble(&self, scene: &SceneSnapshot, scenarios: &[Scenario]) -> Result<Vec<Cftocp>> {
        let cfg = &self.cfg;
        let x0 = &scene.ego.state;
        let current = scene.lanes.lane_of(x0.p_lat)?;
        let n = self.horizon_for(scene);
        let worst = build_worst_case(scene, cfg.a_lv_min, n, cfg.tp)?;
        let speed = match cfg.reference {
            ReferenceSpeed::Current => x0.v_lon.max(0.0),
            ReferenceSpeed::Initial => self.initial_speed.unwrap_or(x0.v_lon).max(0.0),
            ReferenceSpeed::Desired(v) => v,
        };
        cfg.modes(current)
            .into_iter()
            .map(|mode| {
                let reference = build_reference_at(mode, x0, &scene.lanes, n, cfg.tp, speed)?;
                assemble_cftocp(mode, scene, scenarios, &worst, &reference, cfg)
            })
            .collect()
    }

    /// The previous worst-case plan shifted by one step with a zero input
    /// appended, as a decision vector of `problem`.
    fn shifted_candidate(&self, problem: &Cftocp) -> Option<DVector<f64>> {
        let p = self.prev.as_ref()?;
        if p.target_lane != problem.target_lane {
            return None;
        }
        let shifted: Vec<[f64; 2]> = p.worst.iter().skip(1).copied().collect();
        Some(problem.candidate(&shifted))
    }

    /// One control step: assemble, solve every mode, decide.
    pub fn step(&mut self, scene: &SceneSnapshot, scenarios: &[Scenario], verify: bool) -> Result<ControlDecision> {
        self.initial_speed.get_or_insert(scene.ego.state.v_lon);
        let problems = self.assemble(scene, scenarios)?;
        let horizon = problems.first().map(|p| p.horizon).unwrap_or(self.cfg.horizon);
        let candidates: Vec<Option<DVector<f64>>> = problems.iter().map(|p| self.shifted_candidate(p)).collect();
        let shift = if verify {
            problems.iter().zip(&candidates).find_map(|(p, c)| {
                c.as_ref().map(|z| {
                    let v = p.max_violation(z);
                    ShiftCheck { target_lane: p.target_lane, passed: v <= FEASIBILITY_TOL, max_violation: v }
                })
            })
        } else {
            None
        };
        let jobs: Vec<(&Cftocp, Option<&DVector<f64>>)> = problems.iter().zip(candidates.iter().map(|c| c.as_ref())).collect();
        let solutions: Vec<ControlSolution> = par::map(&jobs, |(p, c)| solve_control_mode(p, *c)).into_iter().collect::<Result<_>>()?;
        match decide(&solutions) {
            Some(i) => {
                let s = &solutions[i];
                self.prev = Some(Previous { target_lane: s.target_lane, worst: s.u_worst.clone(), horizon });
                Ok(ControlDecision {
                    input: s.u_worst[0],
                    mode: Some(s.mode),
                    target_lane: Some(s.target_lane),
                    horizon,
                    solutions,
                    emergency: false,
                    shift,
                })
            }
            None => {
                self.prev = None;
                Ok(ControlDecision { input: self.emergency_input(scene), mode: None, target_lane: None, horizon, solutions, emergency: true, shift })
            }
        }
    }

    /// Full braking at the jerk limit with the lateral acceleration driven
    /// back to zero.
    pub fn emergency_input(&self, scene: &SceneSnapshot) -> [f64; 2] {
        let x = &scene.ego.state;
        let tp = self.cfg.tp;
        let lon = if x.v_lon > 0.0 { self.cfg.j_lon.clamp((self.cfg.a_lon.min - x.a_lon) / tp) } else { self.cfg.j_lon.clamp(-x.a_lon / tp) };
        [lon, self.cfg.j_lat.clamp(-x.a_lat / tp)]
    }
}
