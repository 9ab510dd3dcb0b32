//! Condensed prediction of the jerk-driven triple integrator.

use nalgebra::{DMatrix, Vector3};

use crate::types::{integrator_a, integrator_b, jerk_step, CommonState};

/// `x_k = free[k] + Σ_{j<k} gamma(k, j)·u_j` for one axis, `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisPrediction {
    /// Zero-input response `A^k x0`.
    pub free: Vec<Vector3<f64>>,
    /// `A^i B` for `i = 0..N`.
    impulse: Vec<Vector3<f64>>,
}

impl AxisPrediction {
    pub fn new(x0: &Vector3<f64>, n: usize, tp: f64) -> Self {
        let a = integrator_a(tp);
        let b = integrator_b(tp);
        let mut free = Vec::with_capacity(n + 1);
        let mut impulse = Vec::with_capacity(n);
        let mut x = *x0;
        let mut ab = b;
        for _ in 0..n {
            free.push(x);
            impulse.push(ab);
            x = a * x;
            ab = a * ab;
        }
        free.push(x);
        Self { free, impulse }
    }

    pub fn horizon(&self) -> usize {
        self.impulse.len()
    }

    /// Sensitivity of component `c` of `x_k` to `u_j`.
    pub fn gamma(&self, k: usize, c: usize, j: usize) -> f64 {
        if j < k {
            self.impulse[k - 1 - j][c]
        } else {
            0.0
        }
    }

    /// Row of sensitivities of component `c` of `x_k` to `u_0..u_{N-1}`.
    pub fn row(&self, k: usize, c: usize) -> Vec<f64> {
        (0..self.horizon()).map(|j| self.gamma(k, c, j)).collect()
    }

    /// Dense `3(N+1) × N` matrix stacking every `x_k`.
    pub fn gamma_matrix(&self) -> DMatrix<f64> {
        let n = self.horizon();
        DMatrix::from_fn(3 * (n + 1), n, |r, j| self.gamma(r / 3, r % 3, j))
    }

    /// Component `c` of `x_k` under the inputs `u`.
    pub fn eval(&self, k: usize, c: usize, u: &[f64]) -> f64 {
        self.free[k][c] + (0..k).map(|j| self.gamma(k, c, j) * u[j]).sum::<f64>()
    }
}

/// States `x_0..=x_N` obtained by applying `inputs` with [`jerk_step`].
pub fn rollout(x0: &CommonState, inputs: &[[f64; 2]], tp: f64) -> Vec<CommonState> {
    let mut out = Vec::with_capacity(inputs.len() + 1);
    let mut x = *x0;
    out.push(x);
    for u in inputs {
        x = jerk_step(&x, *u, tp);
        out.push(x);
    }
    out
}
