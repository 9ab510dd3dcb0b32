//! Interacting-multiple-model building blocks over dynamically sized
//! Gaussians: mixing, the Kalman cycle, likelihoods, probability update and
//! moment-matched fusion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Lane, PolicyMode, M};

/// Markov mode-transition matrix, `p[from][to]`, rows summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub p: [[f64; M]; M],
}

impl TransitionMatrix {
    /// Self-transition `stay`; the remaining mass is split evenly over all
    /// other modes, except that modes whose target lane is not adjacent to
    /// (or equal to) the current one receive nothing and their share stays.
    pub fn with_self_transition(stay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&stay) {
            return Err(Error::InvalidParameter(format!("self-transition probability {stay} outside [0, 1]")));
        }
        let share = (1.0 - stay) / (M - 1) as f64;
        let mut p = [[0.0; M]; M];
        for (i, from) in PolicyMode::ALL.iter().enumerate() {
            let mut off = 0.0;
            for (j, to) in PolicyMode::ALL.iter().enumerate() {
                if i != j && reachable(from.target_lane, to.target_lane) {
                    p[i][j] = share;
                    off += share;
                }
            }
            p[i][i] = 1.0 - off;
        }
        Ok(Self { p })
    }

    pub fn identity() -> Self {
        let mut p = [[0.0; M]; M];
        for (i, row) in p.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { p }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.p.iter().enumerate() {
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::InvalidParameter(format!("transition row {i} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!("transition row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(M, M, |i, j| self.p[i][j])
    }
}

impl Default for TransitionMatrix {
    fn default() -> Self {
        Self::with_self_transition(0.925).expect("valid default")
    }
}

fn reachable(from: Lane, to: Lane) -> bool {
    from == to || from.is_adjacent(to)
}

/// Output of the mixing stage.
#[derive(Debug, Clone)]
pub struct Mixed {
    /// Predicted mode probabilities `c_i = Σ_j p[j][i]·μ_j`.
    pub c: Vec<f64>,
    /// Mixing weights `w[i][j] = p[j][i]·μ_j / c_i`.
    pub weights: Vec<Vec<f64>>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

/// Mixes per-mode Gaussians for the next cycle. A mode with `c_i = 0` gets
/// the plain probability-weighted mixture of all modes.
pub fn mix(mu: &[f64], pi: &DMatrix<f64>, means: &[DVector<f64>], covs: &[DMatrix<f64>]) -> Mixed {
    let m = mu.len();
    let mut c = vec![0.0; m];
    for (i, ci) in c.iter_mut().enumerate() {
        *ci = (0..m).map(|j| pi[(j, i)] * mu[j]).sum();
    }
    let mut weights = Vec::with_capacity(m);
    let mut out_means = Vec::with_capacity(m);
    let mut out_covs = Vec::with_capacity(m);
    for i in 0..m {
        let w: Vec<f64> = if c[i] > 0.0 {
            (0..m).map(|j| pi[(j, i)] * mu[j] / c[i]).collect()
        } else {
            let s: f64 = mu.iter().sum();
            mu.iter().map(|&x| x / s).collect()
        };
        let (x, p) = fuse(means, covs, &w);
        weights.push(w);
        out_means.push(x);
        out_covs.push(p);
    }
    Mixed { c, weights, means: out_means, covs: out_covs }
}

/// Moment-matched single Gaussian of a mixture.
pub fn fuse(means: &[DVector<f64>], covs: &[DMatrix<f64>], w: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let n = means[0].len();
    let mut x = DVector::zeros(n);
    for (wj, xj) in w.iter().zip(means) {
        x.axpy(*wj, xj, 1.0);
    }
    let mut p = DMatrix::zeros(n, n);
    for ((wj, xj), pj) in w.iter().zip(means).zip(covs) {
        if *wj == 0.0 {
            continue;
        }
        let d = xj - &x;
        p += (pj + &d * d.transpose()) * *wj;
    }
    (x, symmetrize(p))
}

pub fn symmetrize(p: DMatrix<f64>) -> DMatrix<f64> {
    (&p + p.transpose()) * 0.5
}

/// Result of one predict/update cycle with `H = I`.
#[derive(Debug, Clone)]
pub struct KfStep {
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub residual: DVector<f64>,
    pub residual_cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

/// Kalman predict `x⁻ = F x + E`, `P⁻ = F P Fᵀ + Q` and update with a
/// direct measurement of the full state.
pub fn kf_step(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    f: &DMatrix<f64>,
    e: &DVector<f64>,
    q: &DMatrix<f64>,
    y: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Result<KfStep> {
    let prior_mean = f * x + e;
    let prior_cov = symmetrize(f * p * f.transpose() + q);
    let residual = y - &prior_mean;
    let residual_cov = symmetrize(&prior_cov + r);
    let chol = residual_cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
    // L = P⁻ S⁻¹, computed as (S⁻¹ P⁻)ᵀ since both are symmetric.
    let gain = chol.solve(&prior_cov).transpose();
    let mean = &prior_mean + &gain * &residual;
    let n = x.len();
    let ikh = DMatrix::identity(n, n) - &gain;
    // Joseph form keeps the posterior symmetric positive semidefinite.
    let cov = symmetrize(&ikh * &prior_cov * ikh.transpose() + &gain * r * gain.transpose());
    Ok(KfStep { prior_mean, prior_cov, mean, cov, residual, residual_cov, gain })
}

/// `ln N(residual; 0, cov)` with a Cholesky log-determinant.
pub fn gaussian_log_likelihood(residual: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let n = residual.len();
    if n == 0 {
        return Ok(0.0);
    }
    let chol = cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let l = chol.l();
    let log_det: f64 = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    let maha = residual.dot(&chol.solve(residual));
    Ok(-0.5 * (maha + log_det + n as f64 * (2.0 * std::f64::consts::PI).ln()))
}

/// Normalized posterior mode probabilities from log-likelihoods and the
/// predicted probabilities `c`. If every likelihood is degenerate the
/// result is uniform over the modes with the largest `c`.
pub fn update_probabilities(log_likelihoods: &[f64], c: &[f64]) -> Vec<f64> {
    let logw: Vec<f64> = log_likelihoods
        .iter()
        .zip(c)
        .map(|(&l, &ci)| if ci > 0.0 && l.is_finite() { l + ci.ln() } else { f64::NEG_INFINITY })
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        let cmax = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners = c.iter().filter(|&&x| x == cmax).count() as f64;
        log::warn!("all mode likelihoods degenerate; falling back to uniform over the most likely prior modes");
        return c.iter().map(|&x| if x == cmax { 1.0 / winners } else { 0.0 }).collect();
    }
    let w: Vec<f64> = logw.iter().map(|&l| (l - top).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Raises every probability to at least `floor` and renormalizes.
pub fn apply_floor(mu: &mut [f64], floor: f64) {
    for m in mu.iter_mut() {
        *m = m.max(floor);
    }
    let s: f64 = mu.iter().sum();
    for m in mu.iter_mut() {
        *m /= s;
    }
}
