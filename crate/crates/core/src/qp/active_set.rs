//! Primal active-set kernel for `min ½·c·‖w‖² + qᵀw` subject to
//! `a_i·w = b_i` (first `n_eq` rows) and `a_i·w ≤ b_i` (remaining rows).
//!
//! The working set is represented by an orthogonal factorisation
//! `A_Wᵀ = Q·[R; 0]` that is updated with Givens rotations when rows enter or
//! leave, so every iteration costs `O(n·(n + m))`.

use nalgebra::{DMatrix, DVector};

/// Outcome of one kernel run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum KernelStatus {
    Optimal,
    MaxIter,
}

pub(crate) struct Kernel<'a> {
    n: usize,
    c: f64,
    q: DVector<f64>,
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    n_eq: usize,
    qmat: DMatrix<f64>,
    rmat: DMatrix<f64>,
    /// Row indices of the working set, in factorisation column order.
    pub(crate) work: Vec<usize>,
    in_work: Vec<bool>,
    pub(crate) w: DVector<f64>,
    /// Multipliers of the working set rows (same order as `work`).
    pub(crate) mult: DVector<f64>,
    pub(crate) iterations: usize,
}

const DEP_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const MULT_TOL: f64 = 1e-11;

#[inline]
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        (1.0, 0.0, a)
    } else {
        let r = a.hypot(b);
        (a / r, b / r, r)
    }
}

impl<'a> Kernel<'a> {
    /// Creates a kernel at the (assumed feasible) point `w0` with an empty
    /// working set; use [`Kernel::try_add`] to seed it.
    pub(crate) fn new(c: f64, q: DVector<f64>, a: &'a DMatrix<f64>, b: &'a DVector<f64>, n_eq: usize, w0: DVector<f64>) -> Self {
        let n = q.len();
        let m = a.nrows();
        Self {
            n,
            c,
            q,
            a,
            b,
            n_eq,
            qmat: DMatrix::identity(n, n),
            rmat: DMatrix::zeros(n, n),
            work: Vec::with_capacity(n),
            in_work: vec![false; m],
            w: w0,
            mult: DVector::zeros(0),
            iterations: 0,
        }
    }

    fn row_dot(&self, i: usize, v: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for j in 0..self.n {
            s += self.a[(i, j)] * v[j];
        }
        s
    }

    /// Adds row `i` to the working set if it is linearly independent of the
    /// current rows. Returns whether it was added.
    pub(crate) fn try_add(&mut self, i: usize) -> bool {
        if self.in_work[i] {
            return false;
        }
        let k = self.work.len();
        if k >= self.n {
            return false;
        }
        let n = self.n;
        // d = Qᵀ a_i
        let mut d = DVector::zeros(n);
        for col in 0..n {
            let mut s = 0.0;
            for r in 0..n {
                s += self.qmat[(r, col)] * self.a[(i, r)];
            }
            d[col] = s;
        }
        for j in (k + 1..n).rev() {
            if d[j] == 0.0 {
                continue;
            }
            let (c, s, r) = givens(d[j - 1], d[j]);
            d[j - 1] = r;
            d[j] = 0.0;
            for row in 0..n {
                let qa = self.qmat[(row, j - 1)];
                let qb = self.qmat[(row, j)];
                self.qmat[(row, j - 1)] = c * qa + s * qb;
                self.qmat[(row, j)] = -s * qa + c * qb;
            }
        }
        let norm_a: f64 = (0..n).map(|j| self.a[(i, j)].powi(2)).sum::<f64>().sqrt();
        if d[k].abs() <= DEP_TOL * norm_a.max(1e-300) {
            return false;
        }
        for r in 0..=k {
            self.rmat[(r, k)] = d[r];
        }
        self.work.push(i);
        self.in_work[i] = true;
        true
    }

    /// Removes the working-set entry at position `pos`.
    fn remove(&mut self, pos: usize) {
        let k = self.work.len();
        let n = self.n;
        for col in pos..k - 1 {
            for r in 0..=col + 1 {
                self.rmat[(r, col)] = self.rmat[(r, col + 1)];
            }
        }
        for r in 0..n {
            self.rmat[(r, k - 1)] = 0.0;
        }
        for col in pos..k - 1 {
            let (c, s, r) = givens(self.rmat[(col, col)], self.rmat[(col + 1, col)]);
            self.rmat[(col, col)] = r;
            self.rmat[(col + 1, col)] = 0.0;
            for cc in col + 1..k - 1 {
                let ra = self.rmat[(col, cc)];
                let rb = self.rmat[(col + 1, cc)];
                self.rmat[(col, cc)] = c * ra + s * rb;
                self.rmat[(col + 1, cc)] = -s * ra + c * rb;
            }
            for row in 0..n {
                let qa = self.qmat[(row, col)];
                let qb = self.qmat[(row, col + 1)];
                self.qmat[(row, col)] = c * qa + s * qb;
                self.qmat[(row, col + 1)] = -s * qa + c * qb;
            }
        }
        let i = self.work.remove(pos);
        self.in_work[i] = false;
    }

    /// Minimiser of the objective on the affine set of the working rows.
    pub(crate) fn eqp(&self) -> DVector<f64> {
        let k = self.work.len();
        let n = self.n;
        // z = R⁻ᵀ b_W (forward substitution on Rᵀ)
        let mut z = vec![0.0; k];
        for i in 0..k {
            let mut s = self.b[self.work[i]];
            for j in 0..i {
                s -= self.rmat[(j, i)] * z[j];
            }
            z[i] = s / self.rmat[(i, i)];
        }
        let mut w = DVector::zeros(n);
        for (j, zj) in z.iter().enumerate() {
            for r in 0..n {
                w[r] += self.qmat[(r, j)] * zj;
            }
        }
        // − Q2 Q2ᵀ q / c
        for j in k..n {
            let mut s = 0.0;
            for r in 0..n {
                s += self.qmat[(r, j)] * self.q[r];
            }
            let s = s / self.c;
            for r in 0..n {
                w[r] -= self.qmat[(r, j)] * s;
            }
        }
        w
    }

    /// Multipliers `μ = −R⁻¹ Q1ᵀ (c·w + q)` of the working rows at `w`.
    fn multipliers(&self) -> DVector<f64> {
        let k = self.work.len();
        let n = self.n;
        let grad = &self.w * self.c + &self.q;
        let mut t = vec![0.0; k];
        for (j, tj) in t.iter_mut().enumerate() {
            let mut s = 0.0;
            for r in 0..n {
                s += self.qmat[(r, j)] * grad[r];
            }
            *tj = -s;
        }
        let mut mu = DVector::zeros(k);
        for i in (0..k).rev() {
            let mut s = t[i];
            for j in i + 1..k {
                s -= self.rmat[(i, j)] * mu[j];
            }
            mu[i] = s / self.rmat[(i, i)];
        }
        mu
    }

    /// Runs primal active-set iterations until optimality or the cap.
    pub(crate) fn run(&mut self, max_iter: usize) -> KernelStatus {
        let m = self.a.nrows();
        // Rows found numerically dependent on the working set are skipped in
        // the ratio test until the working set shrinks again.
        let mut ignored = vec![false; m];
        loop {
            if self.iterations >= max_iter {
                self.mult = self.multipliers();
                return KernelStatus::MaxIter;
            }
            self.iterations += 1;
            let target = self.eqp();
            let p = &target - &self.w;
            let scale = 1.0 + self.w.amax();
            if p.amax() <= 1e-12 * scale {
                self.w = target;
                let mu = self.multipliers();
                let mult_tol = MULT_TOL * (1.0 + self.q.amax() + self.c * self.w.amax());
                // Most negative inequality multiplier leaves; ties → lowest row.
                let mut leave: Option<(usize, f64)> = None;
                for (pos, &row) in self.work.iter().enumerate() {
                    if row < self.n_eq {
                        continue;
                    }
                    let v = mu[pos];
                    if v < -mult_tol {
                        match leave {
                            None => leave = Some((pos, v)),
                            Some((lp, lv)) => {
                                if v < lv || (v == lv && row < self.work[lp]) {
                                    leave = Some((pos, v));
                                }
                            }
                        }
                    }
                }
                match leave {
                    None => {
                        self.mult = mu;
                        return KernelStatus::Optimal;
                    }
                    Some((pos, _)) => {
                        self.remove(pos);
                        ignored.iter_mut().for_each(|f| *f = false);
                    }
                }
                continue;
            }
            let pnorm = p.norm();
            let mut alpha = 1.0;
            let mut block: Option<usize> = None;
            for i in self.n_eq..m {
                if self.in_work[i] || ignored[i] {
                    continue;
                }
                let ap = self.row_dot(i, &p);
                if ap <= 1e-14 * pnorm {
                    continue;
                }
                let slack = (self.b[i] - self.row_dot(i, &self.w)).max(0.0);
                let ratio = slack / ap;
                if ratio < alpha {
                    alpha = ratio;
                    block = Some(i);
                }
            }
            self.w += p * alpha;
            if let Some(i) = block {
                if !self.try_add(i) {
                    ignored[i] = true;
                }
            }
        }
    }

    /// Largest violation over all rows at `v`.
    pub(crate) fn max_violation(a: &DMatrix<f64>, b: &DVector<f64>, n_eq: usize, v: &DVector<f64>) -> f64 {
        let r = a * v - b;
        let mut worst: f64 = 0.0;
        for (i, ri) in r.iter().enumerate() {
            let viol = if i < n_eq { ri.abs() } else { ri.max(0.0) };
            worst = worst.max(viol);
        }
        worst
    }

    /// Constraints whose residual is within tolerance at `v`.
    pub(crate) fn tight_rows(a: &DMatrix<f64>, b: &DVector<f64>, n_eq: usize, v: &DVector<f64>) -> Vec<usize> {
        let r = a * v - b;
        (n_eq..a.nrows()).filter(|&i| r[i].abs() <= FEAS_TOL).collect()
    }
}

pub(crate) const FEASIBILITY_TOL: f64 = FEAS_TOL;
