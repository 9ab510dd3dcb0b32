//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the solver under test: the QP oracle is an
//! augmented-Lagrangian method with a semismooth Newton inner solve, and the
//! MIQP oracle enumerates every binary assignment on top of it.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scmpc::qp::QpProblem;

/// Result of the oracle: `None` if it judged the problem infeasible.
pub struct OracleSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub violation: f64,
}

/// Stacks general rows and finite bounds into one `G x ≤ h` system.
fn stacked_inequalities(p: &QpProblem) -> (DMatrix<f64>, DVector<f64>) {
    let n = p.n();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..p.a_ineq.nrows() {
        rows.push((p.a_ineq.row(i).iter().copied().collect(), p.b_ineq[i]));
    }
    for j in 0..n {
        if p.upper[j].is_finite() {
            let mut r = vec![0.0; n];
            r[j] = 1.0;
            rows.push((r, p.upper[j]));
        }
        if p.lower[j].is_finite() {
            let mut r = vec![0.0; n];
            r[j] = -1.0;
            rows.push((r, -p.lower[j]));
        }
    }
    let g = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
    let h = DVector::from_fn(rows.len(), |i, _| rows[i].1);
    (g, h)
}

/// Augmented-Lagrangian QP oracle.
pub fn oracle_qp(p: &QpProblem) -> Option<OracleSolution> {
    let n = p.n();
    let (gm, hv) = stacked_inequalities(p);
    let e = &p.a_eq;
    let d = &p.b_eq;
    let mut x = DVector::zeros(n);
    let mut nu = DVector::zeros(e.nrows());
    let mut mu = DVector::zeros(gm.nrows());
    let mut rho = 10.0;
    let al = |x: &DVector<f64>, nu: &DVector<f64>, mu: &DVector<f64>, rho: f64| -> f64 {
        let mut v = 0.5 * x.dot(&(&p.h * x)) + p.g.dot(x);
        if e.nrows() > 0 {
            let r = e * x - d + nu / rho;
            v += 0.5 * rho * r.norm_squared();
        }
        if gm.nrows() > 0 {
            let r = (&gm * x - &hv + mu / rho).map(|t| t.max(0.0));
            v += 0.5 * rho * r.norm_squared();
        }
        v
    };
    for _outer in 0..200 {
        // Semismooth Newton on the (piecewise quadratic) AL function.
        for _inner in 0..100 {
            let mut grad = &p.h * &x + &p.g;
            let mut hess = p.h.clone();
            if e.nrows() > 0 {
                let r = e * &x - d + &nu / rho;
                grad += e.transpose() * &r * rho;
                hess += e.transpose() * e * rho;
            }
            if gm.nrows() > 0 {
                let r = &gm * &x - &hv + &mu / rho;
                for i in 0..gm.nrows() {
                    if r[i] > 0.0 {
                        let row = gm.row(i);
                        grad += row.transpose() * (rho * r[i]);
                        hess += row.transpose() * row * rho;
                    }
                }
            }
            if grad.amax() < 1e-13 * (1.0 + x.amax()) {
                break;
            }
            let step = match hess.clone().cholesky() {
                Some(c) => c.solve(&(-&grad)),
                None => -&grad,
            };
            let f0 = al(&x, &nu, &mu, rho);
            let slope = grad.dot(&step);
            let mut t = 1.0;
            loop {
                let xn = &x + &step * t;
                if al(&xn, &nu, &mu, rho) <= f0 + 1e-4 * t * slope || t < 1e-12 {
                    x = xn;
                    break;
                }
                t *= 0.5;
            }
            if (&step * t).amax() < 1e-15 * (1.0 + x.amax()) {
                break;
            }
        }
        let re = if e.nrows() > 0 { e * &x - d } else { DVector::zeros(0) };
        let ri = if gm.nrows() > 0 { &gm * &x - &hv } else { DVector::zeros(0) };
        if e.nrows() > 0 {
            nu += &re * rho;
        }
        if gm.nrows() > 0 {
            mu = (&mu + &ri * rho).map(|t| t.max(0.0));
        }
        let viol = re.amax().max(ri.iter().fold(0.0_f64, |a, &b| a.max(b)));
        if viol < 1e-11 {
            break;
        }
        rho = (rho * 5.0).min(1e8);
        if !nu.iter().chain(mu.iter()).all(|v| v.is_finite()) || nu.amax().max(mu.amax()) > 1e12 {
            return None;
        }
    }
    let violation = p.max_violation(&x);
    if violation > 1e-6 {
        return None;
    }
    Some(OracleSolution { objective: p.objective(&x), x, violation })
}

/// Random strictly convex QP with a known feasible point.
pub fn random_qp(seed: u64, max_n: usize, max_m: usize) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(0..=max_m);
    let meq = rng.random_range(0..=(n / 3));
    let f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &f * f.transpose() + DMatrix::identity(n, n) * rng.random_range(0.05..1.0);
    let g = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a_eq = DMatrix::from_fn(meq, n, |_, _| rng.random_range(-1.0..1.0));
    let b_eq = &a_eq * &x0;
    let a_in = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let slack = DVector::from_fn(m, |_, _| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) });
    let b_in = &a_in * &x0 + slack;
    let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n, f64::INFINITY);
    for j in 0..n {
        if rng.random_bool(0.3) {
            lower[j] = x0[j] - rng.random_range(0.0..0.5);
        }
        if rng.random_bool(0.3) {
            upper[j] = x0[j] + rng.random_range(0.0..0.5);
        }
    }
    QpProblem::new(h, g).with_eq(a_eq, b_eq).with_ineq(a_in, b_in).with_bounds(lower, upper)
}

/// Random MIQP: continuous part as in [`random_qp`] plus binaries coupled by
/// big-M rows `x_c ≥ l_k·z_k` and random linear and quadratic costs.
pub fn random_miqp(seed: u64, n_bin: usize) -> (QpProblem, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let nc = rng.random_range(2..=6);
    let n = nc + n_bin;
    let f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &f * f.transpose() + DMatrix::identity(n, n) * 0.2;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for _ in 0..rng.random_range(0..4) {
        let r: Vec<f64> = (0..n).map(|j| if j < nc { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
        rows.push((r, rng.random_range(0.5..2.0)));
    }
    for k in 0..n_bin {
        // z_k = 1 forces x_c ≥ level, written −x_c + level·z_k ≤ 0.
        let c = rng.random_range(0..nc);
        let level = rng.random_range(0.2..1.5);
        let mut r = vec![0.0; n];
        r[c] = -1.0;
        r[nc + k] = level;
        rows.push((r, 0.0));
    }
    let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
    let b = DVector::from_fn(rows.len(), |i, _| rows[i].1);
    let mut lower = DVector::from_element(n, -3.0);
    let mut upper = DVector::from_element(n, 3.0);
    for k in 0..n_bin {
        lower[nc + k] = 0.0;
        upper[nc + k] = 1.0;
    }
    let binaries = (nc..n).collect();
    (QpProblem::new(h, g).with_ineq(a, b).with_bounds(lower, upper), binaries)
}

/// Fixes the listed variables by collapsing their bounds.
pub fn with_fixed(p: &QpProblem, fixed: &[(usize, f64)]) -> QpProblem {
    let mut q = p.clone();
    for &(j, v) in fixed {
        q.lower[j] = v;
        q.upper[j] = v;
    }
    q
}

/// Exhaustive MIQP oracle over the AL QP oracle. Returns the lexicographically
/// smallest optimal assignment, its objective, and the runner-up objective.
pub fn oracle_miqp(p: &QpProblem, binaries: &[usize]) -> Option<(Vec<u8>, f64, f64)> {
    let nb = binaries.len();
    let mut results: Vec<(Vec<u8>, f64)> = Vec::new();
    for code in 0u32..(1 << nb) {
        let assign: Vec<u8> = (0..nb).map(|k| ((code >> (nb - 1 - k)) & 1) as u8).collect();
        let fixed: Vec<(usize, f64)> = binaries.iter().zip(&assign).map(|(&j, &v)| (j, v as f64)).collect();
        if let Some(s) = oracle_qp(&with_fixed(p, &fixed)) {
            results.push((assign, s.objective));
        }
    }
    results.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let best = results.first()?.clone();
    let second = results.get(1).map(|r| r.1).unwrap_or(f64::INFINITY);
    Some((best.0, best.1, second))
}

pub mod synth;
