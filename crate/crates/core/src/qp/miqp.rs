//! Small mixed-integer QPs: a subset of variables is restricted to {0, 1}.
//!
//! Up to eight binaries are enumerated exhaustively; larger instances use
//! best-first branch and bound on the continuous relaxation. Ties between
//! assignments with equal objective (within `1e-9` relative) resolve to the
//! lexicographically smaller assignment.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};

use super::{solve_qp, QpProblem, QpSolution, QpStatus};
use crate::error::{Error, Result};

/// Default cap on the number of binary variables.
pub const MAX_BINARIES: usize = 12;
/// Instances with at most this many binaries are enumerated exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 8;

/// QP with some variables restricted to {0, 1}. Big-M couplings are ordinary
/// inequality rows of `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct MiqpProblem {
    pub base: QpProblem,
    pub binaries: Vec<usize>,
    pub cap: usize,
}

impl MiqpProblem {
    pub fn new(base: QpProblem, binaries: Vec<usize>) -> Self {
        Self { base, binaries, cap: MAX_BINARIES }
    }
}

/// Best assignment found with its continuous solution.
#[derive(Debug, Clone, PartialEq)]
pub struct MiqpSolution {
    pub qp: QpSolution,
    pub assignment: Vec<u8>,
    /// Number of QPs solved.
    pub nodes: usize,
}

/// Removes the variables in `fixed` (index, value) and returns the reduced
/// problem, the kept indices and the constant objective offset.
fn substitute(p: &QpProblem, fixed: &[(usize, f64)]) -> (QpProblem, Vec<usize>, f64) {
    let n = p.n();
    let mut value = vec![None; n];
    for &(j, v) in fixed {
        value[j] = Some(v);
    }
    let keep: Vec<usize> = (0..n).filter(|&j| value[j].is_none()).collect();
    let xf = DVector::from_fn(n, |j, _| value[j].unwrap_or(0.0));
    let hx = &p.h * &xf;
    let constant = 0.5 * xf.dot(&hx) + p.g.dot(&xf);
    let nk = keep.len();
    let h = DMatrix::from_fn(nk, nk, |i, j| p.h[(keep[i], keep[j])]);
    let g = DVector::from_fn(nk, |i, _| p.g[keep[i]] + hx[keep[i]]);
    let reduce = |a: &DMatrix<f64>, b: &DVector<f64>| {
        let shifted = b - a * &xf;
        (DMatrix::from_fn(a.nrows(), nk, |i, j| a[(i, keep[j])]), shifted)
    };
    let (a_eq, b_eq) = reduce(&p.a_eq, &p.b_eq);
    let (a_in, mut b_in) = reduce(&p.a_ineq, &p.b_ineq);
    // Bounds of fixed variables become constant rows; keep them as zero rows
    // so a violated bound surfaces as infeasibility.
    let mut extra_rows = Vec::new();
    for &(j, v) in fixed {
        if v > p.upper[j] + 1e-12 || v < p.lower[j] - 1e-12 {
            extra_rows.push(-1.0);
        }
    }
    let mut a_in = a_in;
    if !extra_rows.is_empty() {
        let m = a_in.nrows();
        a_in = a_in.insert_rows(m, extra_rows.len(), 0.0);
        b_in = b_in.insert_rows(m, extra_rows.len(), 0.0);
        for (k, v) in extra_rows.iter().enumerate() {
            b_in[m + k] = *v;
        }
    }
    let lower = DVector::from_fn(nk, |i, _| p.lower[keep[i]]);
    let upper = DVector::from_fn(nk, |i, _| p.upper[keep[i]]);
    let q = QpProblem { h, g, a_eq, b_eq, a_ineq: a_in, b_ineq: b_in, lower, upper };
    (q, keep, constant)
}

/// Solves with the listed variables fixed, returning a full-length solution.
fn solve_fixed(p: &QpProblem, fixed: &[(usize, f64)]) -> Result<QpSolution> {
    let (q, keep, constant) = substitute(p, fixed);
    let n = p.n();
    if keep.is_empty() {
        let mut x = DVector::zeros(n);
        for &(j, v) in fixed {
            x[j] = v;
        }
        let feasible = p.max_violation(&x) <= 1e-9;
        return Ok(QpSolution {
            objective: p.objective(&x),
            x,
            status: if feasible { QpStatus::Optimal } else { QpStatus::Infeasible },
            duals_eq: DVector::zeros(p.a_eq.nrows()),
            duals_ineq: DVector::zeros(p.a_ineq.nrows()),
            duals_lower: DVector::zeros(n),
            duals_upper: DVector::zeros(n),
            active: Vec::new(),
            iterations: 0,
            certificate: None,
        });
    }
    let s = solve_qp(&q)?;
    let mut x = DVector::zeros(n);
    for &(j, v) in fixed {
        x[j] = v;
    }
    let mut duals_lower = DVector::zeros(n);
    let mut duals_upper = DVector::zeros(n);
    for (k, &j) in keep.iter().enumerate() {
        x[j] = s.x[k];
        duals_lower[j] = s.duals_lower[k];
        duals_upper[j] = s.duals_upper[k];
    }
    let m = p.a_ineq.nrows();
    Ok(QpSolution {
        objective: s.objective + constant,
        x,
        status: s.status,
        duals_eq: s.duals_eq,
        duals_ineq: s.duals_ineq.rows(0, m).into_owned(),
        duals_lower,
        duals_upper,
        active: Vec::new(),
        iterations: s.iterations,
        certificate: None,
    })
}

fn better(obj: f64, assign: &[u8], best: &Option<(f64, Vec<u8>, QpSolution)>) -> bool {
    match best {
        None => true,
        Some((bo, ba, _)) => {
            let tol = 1e-9 * (1.0 + bo.abs());
            obj < bo - tol || ((obj - bo).abs() <= tol && assign < ba.as_slice())
        }
    }
}

fn check(p: &MiqpProblem) -> Result<()> {
    p.base.validate()?;
    if p.binaries.len() > p.cap {
        return Err(Error::InvalidParameter(format!("{} binaries exceed the cap of {}", p.binaries.len(), p.cap)));
    }
    let mut seen = vec![false; p.base.n()];
    for &j in &p.binaries {
        if j >= p.base.n() || seen[j] {
            return Err(Error::InvalidParameter(format!("binary index {j} invalid or repeated")));
        }
        seen[j] = true;
    }
    Ok(())
}

fn infeasible(p: &QpProblem, nodes: usize, nb: usize) -> MiqpSolution {
    let n = p.n();
    MiqpSolution {
        qp: QpSolution {
            x: DVector::zeros(n),
            objective: f64::INFINITY,
            status: QpStatus::Infeasible,
            duals_eq: DVector::zeros(p.a_eq.nrows()),
            duals_ineq: DVector::zeros(p.a_ineq.nrows()),
            duals_lower: DVector::zeros(n),
            duals_upper: DVector::zeros(n),
            active: Vec::new(),
            iterations: 0,
            certificate: None,
        },
        assignment: vec![0; nb],
        nodes,
    }
}

/// Enumerates every assignment in lexicographic order.
pub fn solve_miqp_exhaustive(p: &MiqpProblem) -> Result<MiqpSolution> {
    check(p)?;
    let nb = p.binaries.len();
    let mut best: Option<(f64, Vec<u8>, QpSolution)> = None;
    let mut nodes = 0;
    for code in 0u32..(1u32 << nb) {
        let assign: Vec<u8> = (0..nb).map(|k| ((code >> (nb - 1 - k)) & 1) as u8).collect();
        let fixed: Vec<(usize, f64)> = p.binaries.iter().zip(&assign).map(|(&j, &v)| (j, v as f64)).collect();
        let s = solve_fixed(&p.base, &fixed)?;
        nodes += 1;
        if s.status == QpStatus::Optimal && better(s.objective, &assign, &best) {
            best = Some((s.objective, assign, s));
        }
    }
    Ok(match best {
        Some((_, assignment, qp)) => MiqpSolution { qp, assignment, nodes },
        None => infeasible(&p.base, nodes, nb),
    })
}

struct Node {
    bound: f64,
    seq: usize,
    fixed: Vec<Option<u8>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smaller bound (then older node) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Best-first branch and bound on the continuous relaxation.
pub fn solve_miqp_branch_and_bound(p: &MiqpProblem) -> Result<MiqpSolution> {
    check(p)?;
    let nb = p.binaries.len();
    let mut relaxed = p.base.clone();
    for &j in &p.binaries {
        relaxed.lower[j] = relaxed.lower[j].max(0.0);
        relaxed.upper[j] = relaxed.upper[j].min(1.0);
    }
    if p.binaries.iter().any(|&j| relaxed.lower[j] > relaxed.upper[j]) {
        return Ok(infeasible(&p.base, 0, nb));
    }
    let mut best: Option<(f64, Vec<u8>, QpSolution)> = None;
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    let mut nodes = 0;
    heap.push(Node { bound: f64::NEG_INFINITY, seq, fixed: vec![None; nb] });
    while let Some(node) = heap.pop() {
        if let Some((bo, _, _)) = &best {
            if node.bound > bo + 1e-9 * (1.0 + bo.abs()) {
                break;
            }
        }
        let fixed: Vec<(usize, f64)> = p
            .binaries
            .iter()
            .zip(&node.fixed)
            .filter_map(|(&j, v)| v.map(|v| (j, v as f64)))
            .collect();
        let s = solve_fixed(&relaxed, &fixed)?;
        nodes += 1;
        if s.status == QpStatus::Infeasible {
            continue;
        }
        let bound = if s.status == QpStatus::Optimal { s.objective } else { f64::NEG_INFINITY };
        if let Some((bo, _, _)) = &best {
            if bound > bo + 1e-9 * (1.0 + bo.abs()) {
                continue;
            }
        }
        let fractional = (0..nb).find(|&k| node.fixed[k].is_none() && {
            let v = s.x[p.binaries[k]];
            (v - v.round()).abs() > 1e-9
        });
        match fractional {
            None if s.status == QpStatus::Optimal => {
                let assign: Vec<u8> = (0..nb)
                    .map(|k| node.fixed[k].unwrap_or_else(|| s.x[p.binaries[k]].round() as u8))
                    .collect();
                let all: Vec<(usize, f64)> = p.binaries.iter().zip(&assign).map(|(&j, &v)| (j, v as f64)).collect();
                let sf = solve_fixed(&p.base, &all)?;
                nodes += 1;
                if sf.status == QpStatus::Optimal && better(sf.objective, &assign, &best) {
                    best = Some((sf.objective, assign, sf));
                }
            }
            _ => {
                let k = fractional.unwrap_or_else(|| (0..nb).find(|&k| node.fixed[k].is_none()).unwrap_or(0));
                if node.fixed[k].is_some() {
                    continue;
                }
                for v in [0u8, 1u8] {
                    let mut f = node.fixed.clone();
                    f[k] = Some(v);
                    seq += 1;
                    heap.push(Node { bound, seq, fixed: f });
                }
            }
        }
    }
    Ok(match best {
        Some((_, assignment, qp)) => MiqpSolution { qp, assignment, nodes },
        None => infeasible(&p.base, nodes, nb),
    })
}

/// Dispatches to exhaustive enumeration or branch and bound by size.
pub fn solve_miqp(p: &MiqpProblem) -> Result<MiqpSolution> {
    if p.binaries.len() <= EXHAUSTIVE_LIMIT {
        solve_miqp_exhaustive(p)
    } else {
        solve_miqp_branch_and_bound(p)
    }
}
