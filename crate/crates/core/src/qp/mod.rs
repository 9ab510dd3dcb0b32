//! Dense convex QP and small mixed-integer QP.
//!
//! Problems have the form
//!
//! ```text
//! min ½ xᵀHx + gᵀx   s.t.  A_eq x = b_eq,  A_in x ≤ b_in,  lo ≤ x ≤ hi
//! ```
//!
//! with `H` symmetric positive definite. The solver factors `H = LLᵀ`, works
//! in the whitened variable `y = Lᵀx` (identity Hessian), finds a feasible
//! point with a proximal phase-1 problem and then runs a primal active-set
//! method. Independent variable blocks are detected and solved separately.
//!
//! Inequality rows are numbered in a single *combined* index space: general
//! rows `0..m`, then upper bounds `m..m+n`, then lower bounds `m+n..m+2n`.

mod active_set;
pub mod dump;
pub mod miqp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use active_set::{Kernel, KernelStatus, FEASIBILITY_TOL};

pub use miqp::{solve_miqp, solve_miqp_branch_and_bound, solve_miqp_exhaustive, MiqpProblem, MiqpSolution};

/// Convex quadratic program.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem; add constraints with the builder methods.
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_ineq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Checks dimensions, symmetry and bound ordering.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let dim = |m: String| Err(Error::Dimension(m));
        if self.h.shape() != (n, n) {
            return dim(format!("H is {:?}, expected {n}×{n}", self.h.shape()));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return dim("equality block".into());
        }
        if self.a_ineq.ncols() != n || self.a_ineq.nrows() != self.b_ineq.len() {
            return dim("inequality block".into());
        }
        if self.lower.len() != n || self.upper.len() != n {
            return dim("bounds".into());
        }
        let hmax = self.h.amax().max(1.0);
        if (&self.h - self.h.transpose()).amax() > 1e-10 * hmax {
            return dim("H is not symmetric".into());
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] {
                return dim(format!("bound {j}: lower {} > upper {}", self.lower[j], self.upper[j]));
            }
        }
        let finite = self.h.iter().chain(self.g.iter()).chain(self.a_eq.iter()).chain(self.b_eq.iter());
        if !finite.chain(self.a_ineq.iter()).chain(self.b_ineq.iter()).all(|v| v.is_finite()) {
            return dim("non-finite problem data".into());
        }
        Ok(())
    }

    /// Largest constraint violation of `x` (equalities, rows and bounds).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        if self.a_eq.nrows() > 0 {
            worst = worst.max((&self.a_eq * x - &self.b_eq).amax());
        }
        if self.a_ineq.nrows() > 0 {
            worst = worst.max((&self.a_ineq * x - &self.b_ineq).max().max(0.0));
        }
        for j in 0..self.n() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }
}

/// Termination status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

/// Farkas-style infeasibility certificate: non-negative row multipliers
/// (combined index space) and free equality multipliers with
/// `Σμ_i a_i + Σν_j e_j ≈ 0` and `μᵀb + νᵀb_eq > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub ineq: DVector<f64>,
    pub eq: DVector<f64>,
}

/// Solver output.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub duals_eq: DVector<f64>,
    pub duals_ineq: DVector<f64>,
    pub duals_lower: DVector<f64>,
    pub duals_upper: DVector<f64>,
    /// Active inequality rows at the solution (combined index space).
    pub active: Vec<usize>,
    pub iterations: usize,
    pub certificate: Option<Certificate>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Warm-start hint: a candidate point and a working-set guess.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmStart {
    pub x: Option<DVector<f64>>,
    pub active: Vec<usize>,
}

impl WarmStart {
    pub fn from_solution(s: &QpSolution) -> Self {
        Self { x: Some(s.x.clone()), active: s.active.clone() }
    }
}

/// Solver knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Iteration cap per independent block (0 = automatic).
    pub max_iter: usize,
    /// Split into independent blocks before solving.
    pub decompose: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { max_iter: 0, decompose: true }
    }
}

/// KKT residuals of a candidate primal/dual pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub dual_sign: f64,
}

/// Evaluates primal feasibility, stationarity, complementary slackness and
/// dual sign violations of `sol` for `p`.
pub fn kkt_residuals(p: &QpProblem, sol: &QpSolution) -> KktResiduals {
    let x = &sol.x;
    let mut grad = &p.h * x + &p.g;
    if p.a_eq.nrows() > 0 {
        grad += p.a_eq.transpose() * &sol.duals_eq;
    }
    if p.a_ineq.nrows() > 0 {
        grad += p.a_ineq.transpose() * &sol.duals_ineq;
    }
    grad += &sol.duals_upper - &sol.duals_lower;
    let mut comp: f64 = 0.0;
    let mut sign: f64 = 0.0;
    for i in 0..p.a_ineq.nrows() {
        let slack = p.b_ineq[i] - p.a_ineq.row(i).dot(&x.transpose());
        comp = comp.max((sol.duals_ineq[i] * slack).abs());
        sign = sign.max(-sol.duals_ineq[i]);
    }
    for j in 0..p.n() {
        if p.upper[j].is_finite() {
            comp = comp.max((sol.duals_upper[j] * (p.upper[j] - x[j])).abs());
        }
        if p.lower[j].is_finite() {
            comp = comp.max((sol.duals_lower[j] * (x[j] - p.lower[j])).abs());
        }
        sign = sign.max(-sol.duals_upper[j]).max(-sol.duals_lower[j]);
    }
    KktResiduals { primal: p.max_violation(x), stationarity: grad.amax(), complementarity: comp, dual_sign: sign }
}

/// Solves `p` from a cold start.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    solve_qp_with(p, &QpSettings::default(), None)
}

/// Solves `p` starting from a warm-start hint.
pub fn solve_qp_warm(p: &QpProblem, warm: &WarmStart) -> Result<QpSolution> {
    solve_qp_with(p, &QpSettings::default(), Some(warm))
}

/// One inequality or equality row in combined form.
struct Row {
    id: usize,
    coeffs: Vec<(usize, f64)>,
    rhs: f64,
}

fn collect_rows(p: &QpProblem) -> (Vec<Row>, Vec<Row>) {
    let n = p.n();
    let m = p.a_ineq.nrows();
    let sparse = |mat: &DMatrix<f64>, i: usize| -> Vec<(usize, f64)> {
        (0..n).filter(|&j| mat[(i, j)] != 0.0).map(|j| (j, mat[(i, j)])).collect()
    };
    let eq = (0..p.a_eq.nrows()).map(|i| Row { id: i, coeffs: sparse(&p.a_eq, i), rhs: p.b_eq[i] }).collect();
    let mut ineq: Vec<Row> = (0..m).map(|i| Row { id: i, coeffs: sparse(&p.a_ineq, i), rhs: p.b_ineq[i] }).collect();
    for j in 0..n {
        if p.upper[j].is_finite() {
            ineq.push(Row { id: m + j, coeffs: vec![(j, 1.0)], rhs: p.upper[j] });
        }
    }
    for j in 0..n {
        if p.lower[j].is_finite() {
            ineq.push(Row { id: m + n + j, coeffs: vec![(j, -1.0)], rhs: -p.lower[j] });
        }
    }
    (eq, ineq)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Partition of the variables into blocks coupled by `H` or by constraints.
fn blocks(p: &QpProblem, eq: &[Row], ineq: &[Row]) -> Vec<Vec<usize>> {
    let n = p.n();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if p.h[(i, j)] != 0.0 || p.h[(j, i)] != 0.0 {
                union(&mut parent, i, j);
            }
        }
    }
    for row in eq.iter().chain(ineq) {
        if let Some(&(first, _)) = row.coeffs.first() {
            for &(j, _) in &row.coeffs[1..] {
                union(&mut parent, first, j);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Cholesky factor of `h`, regularising with `λI` if needed.
fn factor(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = h.clone().cholesky() {
        return Ok(c.l());
    }
    let n = h.nrows();
    let mut lambda = 1e-9 * h.trace().abs().max(1e-12) / n as f64;
    for _ in 0..12 {
        let reg = h + DMatrix::identity(n, n) * lambda;
        if let Some(c) = reg.cholesky() {
            log::warn!("QP Hessian regularised with λ = {lambda:e}");
            return Ok(c.l());
        }
        lambda *= 10.0;
    }
    Err(Error::Dimension("Hessian is not positive definite even after regularisation".into()))
}

struct BlockResult {
    x: DVector<f64>,
    status: QpStatus,
    duals_eq: Vec<(usize, f64)>,
    duals_ineq: Vec<(usize, f64)>,
    active: Vec<usize>,
    iterations: usize,
    certificate: Option<(SparseRow, SparseRow)>,
}

/// Sparse vector as (index, value) pairs.
type SparseRow = Vec<(usize, f64)>;

/// Solves `p` with explicit settings and optional warm start.
pub fn solve_qp_with(p: &QpProblem, settings: &QpSettings, warm: Option<&WarmStart>) -> Result<QpSolution> {
    p.validate()?;
    let n = p.n();
    let m = p.a_ineq.nrows();
    let (eq, ineq) = collect_rows(p);

    // Rows without support are constants: either trivially satisfied or the
    // whole problem is infeasible.
    let mut trivially_infeasible = None;
    for r in &eq {
        if r.coeffs.is_empty() && r.rhs.abs() > FEASIBILITY_TOL {
            trivially_infeasible = Some((Vec::new(), vec![(r.id, -r.rhs.signum())]));
        }
    }
    for r in &ineq {
        if r.coeffs.is_empty() && r.rhs < -FEASIBILITY_TOL {
            trivially_infeasible = Some((vec![(r.id, 1.0)], Vec::new()));
        }
    }

    let groups = if settings.decompose { blocks(p, &eq, &ineq) } else { vec![(0..n).collect()] };
    let mut var_block = vec![0usize; n];
    for (b, vars) in groups.iter().enumerate() {
        for &v in vars {
            var_block[v] = b;
        }
    }
    let block_of = |r: &Row| r.coeffs.first().map(|&(j, _)| var_block[j]);

    let mut x = DVector::zeros(n);
    let mut status = QpStatus::Optimal;
    let mut duals_eq = DVector::zeros(p.a_eq.nrows());
    let mut duals_ineq = DVector::zeros(m);
    let mut duals_lower = DVector::zeros(n);
    let mut duals_upper = DVector::zeros(n);
    let mut active = Vec::new();
    let mut iterations = 0;
    let mut certificate = None;

    if let Some((ci, ce)) = trivially_infeasible {
        let mut cert = Certificate { ineq: DVector::zeros(m + 2 * n), eq: DVector::zeros(p.a_eq.nrows()) };
        for (i, v) in ci {
            cert.ineq[i] = v;
        }
        for (i, v) in ce {
            cert.eq[i] = v;
        }
        return Ok(QpSolution {
            objective: p.objective(&x),
            x,
            status: QpStatus::Infeasible,
            duals_eq,
            duals_ineq,
            duals_lower,
            duals_upper,
            active,
            iterations,
            certificate: Some(cert),
        });
    }

    for (b, vars) in groups.iter().enumerate() {
        let beq: Vec<&Row> = eq.iter().filter(|r| block_of(r) == Some(b)).collect();
        let bin: Vec<&Row> = ineq.iter().filter(|r| block_of(r) == Some(b)).collect();
        let res = solve_block(p, vars, &beq, &bin, settings, warm)?;
        for (k, &v) in vars.iter().enumerate() {
            x[v] = res.x[k];
        }
        iterations += res.iterations;
        match (status, res.status) {
            (_, QpStatus::Infeasible) => status = QpStatus::Infeasible,
            (QpStatus::Optimal, QpStatus::MaxIter) => status = QpStatus::MaxIter,
            _ => {}
        }
        for (id, v) in res.duals_eq {
            duals_eq[id] = v;
        }
        for (id, v) in res.duals_ineq {
            if id < m {
                duals_ineq[id] = v;
            } else if id < m + n {
                duals_upper[id - m] = v;
            } else {
                duals_lower[id - m - n] = v;
            }
        }
        active.extend(res.active);
        if let Some((ci, ce)) = res.certificate {
            let cert = certificate
                .get_or_insert_with(|| Certificate { ineq: DVector::zeros(m + 2 * n), eq: DVector::zeros(p.a_eq.nrows()) });
            for (i, v) in ci {
                cert.ineq[i] = v;
            }
            for (i, v) in ce {
                cert.eq[i] = v;
            }
        }
    }
    active.sort_unstable();
    Ok(QpSolution {
        objective: p.objective(&x),
        x,
        status,
        duals_eq,
        duals_ineq,
        duals_lower,
        duals_upper,
        active,
        iterations,
        certificate,
    })
}

fn solve_block(
    p: &QpProblem,
    vars: &[usize],
    eq: &[&Row],
    ineq: &[&Row],
    settings: &QpSettings,
    warm: Option<&WarmStart>,
) -> Result<BlockResult> {
    let nb = vars.len();
    let mut local = vec![usize::MAX; p.n()];
    for (k, &v) in vars.iter().enumerate() {
        local[v] = k;
    }
    let h = DMatrix::from_fn(nb, nb, |i, j| p.h[(vars[i], vars[j])]);
    let g = DVector::from_fn(nb, |i, _| p.g[vars[i]]);
    let l = factor(&h)?;
    let lt = l.transpose();

    // Whitened, row-normalised constraint matrix: equalities first.
    let n_eq = eq.len();
    let mrows = n_eq + ineq.len();
    let mut a_raw = DMatrix::zeros(mrows, nb);
    let mut b = DVector::zeros(mrows);
    for (i, r) in eq.iter().chain(ineq.iter()).enumerate() {
        for &(j, v) in &r.coeffs {
            a_raw[(i, local[j])] = v;
        }
        b[i] = r.rhs;
    }
    // Ā = A L⁻ᵀ  ⇔  Āᵀ = L⁻¹ Aᵀ
    let mut abar_t = a_raw.transpose();
    if mrows > 0 && !l.solve_lower_triangular_mut(&mut abar_t) {
        return Err(Error::Dimension("singular Cholesky factor".into()));
    }
    let mut abar = abar_t.transpose();
    let mut row_norm = vec![1.0; mrows];
    for i in 0..mrows {
        let nrm = abar.row(i).norm();
        if nrm > 0.0 {
            row_norm[i] = nrm;
            for j in 0..nb {
                abar[(i, j)] /= nrm;
            }
            b[i] /= nrm;
        }
    }
    let gbar = l.solve_lower_triangular(&g).ok_or_else(|| Error::Dimension("singular Cholesky factor".into()))?;
    let to_x = |y: &DVector<f64>| -> DVector<f64> { lt.solve_upper_triangular(y).unwrap_or_else(|| y.clone()) };
    let max_iter = if settings.max_iter > 0 { settings.max_iter } else { 50 * (nb + mrows) + 200 };
    let row_ids: Vec<usize> = eq.iter().chain(ineq.iter()).map(|r| r.id).collect();
    let id_to_row: std::collections::HashMap<usize, usize> =
        row_ids.iter().enumerate().skip(n_eq).map(|(i, &id)| (id, i)).collect();

    let mut iterations = 0;

    // Starting point: warm start if feasible, otherwise phase 1.
    let mut start: Option<(DVector<f64>, Vec<usize>)> = None;
    if let Some(ws) = warm {
        if let Some(xw) = &ws.x {
            if xw.len() == p.n() {
                let xl = DVector::from_fn(nb, |i, _| xw[vars[i]]);
                let yw = &lt * xl;
                if Kernel::max_violation(&abar, &b, n_eq, &yw) <= FEASIBILITY_TOL {
                    let r = &abar * &yw - &b;
                    let guess: Vec<usize> = ws
                        .active
                        .iter()
                        .filter_map(|id| id_to_row.get(id).copied())
                        .filter(|&i| r[i].abs() <= FEASIBILITY_TOL)
                        .collect();
                    start = Some((yw, guess));
                }
            }
        }
    }

    let (y0, seed) = match start {
        Some(s) => s,
        None => {
            // Least-norm point on the equality rows.
            let mut k = Kernel::new(1.0, DVector::zeros(nb), &abar, &b, n_eq, DVector::zeros(nb));
            for i in 0..n_eq {
                k.try_add(i);
            }
            let y_ls = k.eqp();
            let eq_viol = Kernel::max_violation(&abar.rows(0, n_eq).into_owned(), &b.rows(0, n_eq).into_owned(), n_eq, &y_ls);
            if eq_viol > 1e-8 {
                // Inconsistent equalities: certificate from the residual.
                let r = abar.rows(0, n_eq) * &y_ls - b.rows(0, n_eq);
                let ce = (0..n_eq).map(|i| (row_ids[i], -r[i] / row_norm[i])).collect();
                return Ok(BlockResult {
                    x: to_x(&y_ls),
                    status: QpStatus::Infeasible,
                    duals_eq: Vec::new(),
                    duals_ineq: Vec::new(),
                    active: Vec::new(),
                    iterations,
                    certificate: Some((Vec::new(), ce)),
                });
            }
            if Kernel::max_violation(&abar, &b, n_eq, &y_ls) <= FEASIBILITY_TOL {
                (y_ls, Vec::new())
            } else {
                match phase_one(&abar, &b, n_eq, &y_ls, max_iter, &mut iterations) {
                    PhaseOne::Feasible(y, act) => (y, act),
                    PhaseOne::Infeasible(y, mult) => {
                        let ce = (0..n_eq).map(|i| (row_ids[i], mult[i] / row_norm[i])).collect();
                        let ci = (n_eq..mrows).map(|i| (row_ids[i], mult[i] / row_norm[i])).collect();
                        return Ok(BlockResult {
                            x: to_x(&y),
                            status: QpStatus::Infeasible,
                            duals_eq: Vec::new(),
                            duals_ineq: Vec::new(),
                            active: Vec::new(),
                            iterations,
                            certificate: Some((ci, ce)),
                        });
                    }
                }
            }
        }
    };

    let mut k = Kernel::new(1.0, gbar.clone(), &abar, &b, n_eq, y0);
    for i in 0..n_eq {
        k.try_add(i);
    }
    let mut seed = seed;
    seed.sort_unstable();
    for i in seed {
        k.try_add(i);
    }
    let st = k.run(max_iter);
    iterations += k.iterations;
    let status = match st {
        KernelStatus::Optimal => QpStatus::Optimal,
        KernelStatus::MaxIter => QpStatus::MaxIter,
    };
    let mut duals_eq = Vec::new();
    let mut duals_ineq = Vec::new();
    let mut active = Vec::new();
    for (pos, &row) in k.work.iter().enumerate() {
        let mu = k.mult.get(pos).copied().unwrap_or(0.0) / row_norm[row];
        if row < n_eq {
            duals_eq.push((row_ids[row], mu));
        } else {
            duals_ineq.push((row_ids[row], mu.max(0.0)));
            active.push(row_ids[row]);
        }
    }
    Ok(BlockResult { x: to_x(&k.w), status, duals_eq, duals_ineq, active, iterations, certificate: None })
}

enum PhaseOne {
    Feasible(DVector<f64>, Vec<usize>),
    Infeasible(DVector<f64>, DVector<f64>),
}

/// Minimises the maximal violation `t` by proximal-point iterations on
/// `t + ½ρ⁻¹‖w − w_k‖²` over `w = (y, t)`.
fn phase_one(abar: &DMatrix<f64>, b: &DVector<f64>, n_eq: usize, y0: &DVector<f64>, max_iter: usize, iterations: &mut usize) -> PhaseOne {
    let nb = y0.len();
    let m = abar.nrows();
    let mut a1 = DMatrix::zeros(m + 1, nb + 1);
    let mut b1 = DVector::zeros(m + 1);
    for i in 0..m {
        for j in 0..nb {
            a1[(i, j)] = abar[(i, j)];
        }
        if i >= n_eq {
            a1[(i, nb)] = -1.0;
        }
        b1[i] = b[i];
    }
    // t ≥ 0
    a1[(m, nb)] = -1.0;
    let viol = Kernel::max_violation(abar, b, n_eq, y0);
    let mut w = DVector::zeros(nb + 1);
    w.rows_mut(0, nb).copy_from(y0);
    w[nb] = viol;
    let rho = 1e4 * (1.0 + y0.amax() + viol);
    let mut work_guess: Vec<usize> = Vec::new();
    let mut last_t = f64::INFINITY;
    let mut mult_full = DVector::zeros(m + 1);
    for _outer in 0..60 {
        let mut q = -&w / rho;
        q[nb] += 1.0;
        let mut k = Kernel::new(1.0 / rho, q, &a1, &b1, n_eq, w.clone());
        for i in 0..n_eq {
            k.try_add(i);
        }
        let r = &a1 * &w - &b1;
        for &i in &work_guess {
            if r[i].abs() <= FEASIBILITY_TOL {
                k.try_add(i);
            }
        }
        let st = k.run(max_iter);
        *iterations += k.iterations;
        w = k.w.clone();
        mult_full.fill(0.0);
        for (pos, &row) in k.work.iter().enumerate() {
            mult_full[row] = k.mult.get(pos).copied().unwrap_or(0.0);
        }
        work_guess = k.work.iter().copied().filter(|&i| i >= n_eq).collect();
        let t = w[nb];
        if t <= 1e-10 {
            let y = w.rows(0, nb).into_owned();
            // Polish: rows below the cap are feasible; report tight rows as a
            // working-set seed.
            if Kernel::max_violation(abar, b, n_eq, &y) <= FEASIBILITY_TOL {
                let tight = Kernel::tight_rows(abar, b, n_eq, &y);
                return PhaseOne::Feasible(y, tight);
            }
        }
        if st == KernelStatus::MaxIter {
            break;
        }
        if (last_t - t).abs() <= 1e-13 * (1.0 + t) && t > 1e-8 {
            break;
        }
        last_t = t;
    }
    let y = w.rows(0, nb).into_owned();
    if Kernel::max_violation(abar, b, n_eq, &y) <= FEASIBILITY_TOL {
        let tight = Kernel::tight_rows(abar, b, n_eq, &y);
        return PhaseOne::Feasible(y, tight);
    }
    PhaseOne::Infeasible(y, mult_full.rows(0, m).into_owned())
}
