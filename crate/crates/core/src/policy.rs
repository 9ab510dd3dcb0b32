//! Closed-loop policy models: LQR gain synthesis and the per-mode discrete
//! dynamics `z_{k+1} = F z_k + E`.
//!
//! The longitudinal block acts on `[p, v, a, r_ref]`, the lateral block on
//! `[p, v, a]`; there is no coupling between them.

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix4, SMatrix, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    integrator_a, integrator_b, CommonState, Lane, LaneGeometry, Longitudinal, PolicyMode, Vector7,
};

/// Diagonal LQR weights: state weights and a scalar input weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrWeights {
    pub q: Vec<f64>,
    pub r: f64,
}

impl LqrWeights {
    pub fn new(q: Vec<f64>, r: f64) -> Self {
        Self { q, r }
    }
}

/// How the lead-vehicle velocity enters the distance-keeping reference column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DkMatrix {
    /// Every row of the time-gap column uses the position gain, so the
    /// closed loop has a following equilibrium at gap = r_ref · v_lead.
    #[default]
    SymmetricK1,
    /// Acceleration row uses the velocity gain, exactly as typeset.
    AsPrinted,
}

/// Gain synthesis settings; explicit gains bypass synthesis per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainConfig {
    /// Weights on the velocity-tracking error and acceleration.
    pub vt: LqrWeights,
    /// Weights on gap, relative velocity and relative acceleration.
    pub dk: LqrWeights,
    /// Weights on lateral offset, velocity and acceleration.
    pub lat: LqrWeights,
    pub k_lon_vt: Option<[f64; 3]>,
    pub k_lon_dk: Option<[f64; 3]>,
    pub k_lat: Option<[f64; 3]>,
    pub dk_matrix: DkMatrix,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            vt: LqrWeights::new(vec![1.0, 1.0], 10.0),
            dk: LqrWeights::new(vec![1.0, 1.0, 1.0], 10.0),
            lat: LqrWeights::new(vec![1.0, 1.0, 1.0], 10.0),
            k_lon_vt: None,
            k_lon_dk: None,
            k_lat: Some([1.15, 3.39, 3.58]),
            dk_matrix: DkMatrix::default(),
        }
    }
}

/// Feedback gains `u = −K·(error state)` for each channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    /// `[0, k_v, k_a]`: velocity tracking only uses the last two entries.
    pub k_lon_vt: [f64; 3],
    pub k_lon_dk: [f64; 3],
    pub k_lat: [f64; 3],
    pub dk_matrix: DkMatrix,
}

/// Solves the discrete algebraic Riccati equation
/// `P = AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q` by the structure-preserving
/// doubling algorithm.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Synthesis("inconsistent matrix dimensions".into()));
    }
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Synthesis("input weight is not positive definite".into()))?
        .inverse();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut ak = a.clone();
    let mut gk = b * r_inv * b.transpose();
    let mut hk = q.clone();
    for _ in 0..200 {
        let w = (&eye + &gk * &hk)
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Synthesis("doubling iteration became singular".into()))?;
        let a_next = &ak * &w * &ak;
        let g_next = &gk + &ak * &w * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w * &ak;
        let diff = (&h_next - &hk).amax();
        let scale = h_next.amax().max(1.0);
        ak = a_next;
        gk = 0.5 * (&g_next + g_next.transpose());
        hk = 0.5 * (&h_next + h_next.transpose());
        if !hk.iter().all(|x| x.is_finite()) {
            return Err(Error::Synthesis("Riccati solution diverged".into()));
        }
        if diff <= 1e-14 * scale {
            return Ok(hk);
        }
    }
    Ok(hk)
}

/// Discrete LQR gain `K = (R + BᵀPB)⁻¹BᵀPA`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = solve_dare(a, b, q, r)?;
    let s = r + b.transpose() * &p * b;
    let s_inv = s
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Synthesis("singular gain normal matrix".into()))?;
    Ok(s_inv * b.transpose() * p * a)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn diag_weights(w: &LqrWeights, n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if w.q.len() != n {
        return Err(Error::Synthesis(format!("expected {n} state weights, got {}", w.q.len())));
    }
    if w.q.iter().any(|&x| !(x >= 0.0)) || !(w.r > 0.0) {
        return Err(Error::Synthesis("weights must be non-negative with a positive input weight".into()));
    }
    Ok((DMatrix::from_diagonal(&nalgebra::DVector::from_vec(w.q.clone())), DMatrix::from_element(1, 1, w.r)))
}

fn double_integrator(dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]);
    (a, b)
}

fn triple_integrator(dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = integrator_a(dt);
    let b = integrator_b(dt);
    (DMatrix::from_iterator(3, 3, a.iter().copied()), DMatrix::from_iterator(3, 1, b.iter().copied()))
}

/// Closed-loop matrix of the velocity-tracking channel on `(v, a)`.
pub fn vt_closed_loop(k: &[f64; 3], dt: f64) -> Matrix2<f64> {
    let a = Matrix2::new(1.0, dt, 0.0, 1.0);
    let b = Vector2::new(0.5 * dt * dt, dt);
    a - b * nalgebra::RowVector2::new(k[1], k[2])
}

/// Closed-loop matrix `A − B·Kᵀ` of a triple-integrator channel.
pub fn triple_closed_loop(k: &[f64; 3], dt: f64) -> Matrix3<f64> {
    integrator_a(dt) - integrator_b(dt) * nalgebra::RowVector3::new(k[0], k[1], k[2])
}

fn check_stable(name: &str, m: DMatrix<f64>) -> Result<()> {
    let rho = spectral_radius(&m);
    if !(rho < 1.0) {
        return Err(Error::Synthesis(format!("{name} closed loop is not stable (spectral radius {rho})")));
    }
    Ok(())
}

/// Synthesizes (or takes from config) the three feedback gains and checks
/// that each closed loop is Schur stable at the sampling time `dt`.
pub fn synthesize_gains(cfg: &GainConfig, dt: f64) -> Result<GainSet> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("sampling time must be positive, got {dt}")));
    }
    let k_lon_vt = match cfg.k_lon_vt {
        Some(k) => k,
        None => {
            let (a, b) = double_integrator(dt);
            let (q, r) = diag_weights(&cfg.vt, 2)?;
            let k = lqr_gain(&a, &b, &q, &r)?;
            [0.0, k[(0, 0)], k[(0, 1)]]
        }
    };
    let triple = |k: Option<[f64; 3]>, w: &LqrWeights| -> Result<[f64; 3]> {
        match k {
            Some(k) => Ok(k),
            None => {
                let (a, b) = triple_integrator(dt);
                let (q, r) = diag_weights(w, 3)?;
                let k = lqr_gain(&a, &b, &q, &r)?;
                Ok([k[(0, 0)], k[(0, 1)], k[(0, 2)]])
            }
        }
    };
    let k_lon_dk = triple(cfg.k_lon_dk, &cfg.dk)?;
    let k_lat = triple(cfg.k_lat, &cfg.lat)?;

    let vt = vt_closed_loop(&k_lon_vt, dt);
    check_stable("velocity-tracking", DMatrix::from_iterator(2, 2, vt.iter().copied()))?;
    let dk = triple_closed_loop(&k_lon_dk, dt);
    check_stable("distance-keeping", DMatrix::from_iterator(3, 3, dk.iter().copied()))?;
    let lat = triple_closed_loop(&k_lat, dt);
    check_stable("lateral", DMatrix::from_iterator(3, 3, lat.iter().copied()))?;

    Ok(GainSet { k_lon_vt, k_lon_dk, k_lat, dk_matrix: cfg.dk_matrix })
}

/// Per-mode discrete dynamics over one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDynamics {
    pub f: SMatrix<f64, 7, 7>,
    pub e: Vector7,
    pub mode: PolicyMode,
    pub depends_on_lv: bool,
}

/// Longitudinal block `(F_lon, E_lon)` on `[p, v, a, r_ref]`.
///
/// `lv` is required in distance-keeping mode and ignored otherwise.
pub fn lon_block(
    longitudinal: Longitudinal,
    gains: &GainSet,
    dt: f64,
    lv: Option<&CommonState>,
) -> Result<(Matrix4<f64>, Vector4<f64>)> {
    let mut f = Matrix4::zeros();
    let mut e = Vector4::zeros();
    match longitudinal {
        Longitudinal::VT => {
            let [_, k2, k3] = gains.k_lon_vt;
            let t2 = 0.5 * dt * dt;
            f[(0, 0)] = 1.0;
            f[(0, 1)] = dt;
            f[(0, 2)] = t2;
            f[(1, 1)] = 1.0 - k2 * t2;
            f[(1, 2)] = dt - k3 * t2;
            f[(1, 3)] = k2 * t2;
            f[(2, 1)] = -k2 * dt;
            f[(2, 2)] = 1.0 - k3 * dt;
            f[(2, 3)] = k2 * dt;
            f[(3, 3)] = 1.0;
        }
        Longitudinal::DK => {
            let lv = lv.ok_or(Error::MissingLeadVehicle)?;
            let k = gains.k_lon_dk;
            let b = integrator_b(dt);
            let cl = triple_closed_loop(&k, dt);
            f.fixed_view_mut::<3, 3>(0, 0).copy_from(&cl);
            let v_lead = lv.v_lon;
            f[(0, 3)] = -b[0] * k[0] * v_lead;
            f[(1, 3)] = -b[1] * k[0] * v_lead;
            f[(2, 3)] = match gains.dk_matrix {
                DkMatrix::SymmetricK1 => -b[2] * k[0] * v_lead,
                DkMatrix::AsPrinted => -b[2] * k[1] * v_lead,
            };
            f[(3, 3)] = 1.0;
            // Absolute-frame coupling: the feedback acts on (x − x_LV), so the
            // lead state enters through the input column only.
            let drive = k[0] * lv.p_lon + k[1] * lv.v_lon + k[2] * lv.a_lon;
            e.fixed_rows_mut::<3>(0).copy_from(&(b * drive));
        }
    }
    Ok((f, e))
}

/// Lateral block `(F_lat, E_lat)` tracking the centerline of `lane`.
pub fn lat_block(lane: Lane, gains: &GainSet, dt: f64, lanes: &LaneGeometry) -> (Matrix3<f64>, Vector3<f64>) {
    let f = triple_closed_loop(&gains.k_lat, dt);
    let e = integrator_b(dt) * (gains.k_lat[0] * lanes.centerline(lane));
    (f, e)
}

/// Assembles the block-diagonal 7×7 dynamics of one policy mode.
pub fn build_mode_dynamics(
    mode: PolicyMode,
    gains: &GainSet,
    dt: f64,
    lanes: &LaneGeometry,
    lv: Option<&CommonState>,
) -> Result<ModeDynamics> {
    let (fl, el) = lon_block(mode.longitudinal, gains, dt, lv)?;
    let (ft, et) = lat_block(mode.target_lane, gains, dt, lanes);
    let mut f = SMatrix::<f64, 7, 7>::zeros();
    let mut e = Vector7::zeros();
    f.fixed_view_mut::<4, 4>(0, 0).copy_from(&fl);
    f.fixed_view_mut::<3, 3>(4, 4).copy_from(&ft);
    e.fixed_rows_mut::<4>(0).copy_from(&el);
    e.fixed_rows_mut::<3>(4).copy_from(&et);
    Ok(ModeDynamics { f, e, mode, depends_on_lv: mode.longitudinal == Longitudinal::DK })
}

/// The typeset lead-vehicle coupling matrix of the distance-keeping mode,
/// which maps `[p_LV, v_LV, a_LV, 0]` into the relative-frame drive term.
/// Kept for reference; [`lon_block`] uses the absolute-frame equivalent
/// `printed · x_LV + A·x_LV`.
pub fn printed_dk_lv_coupling(gains: &GainSet, dt: f64) -> Matrix4<f64> {
    let [k1, k2, k3] = gains.k_lon_dk;
    let t2 = dt * dt / 2.0;
    let t3 = dt * dt * dt / 6.0;
    Matrix4::new(
        k1 * t3 - 1.0,
        k2 * t3 - dt,
        k3 * t3 - t2,
        0.0,
        k1 * t2,
        k2 * t2 - 1.0,
        k3 * t2 - dt,
        0.0,
        k1 * dt,
        k2 * dt,
        k3 * dt - 1.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    )
}

/// Stand-in lead vehicle used when nobody drives ahead: far enough ahead
/// never to bind, at the follower's speed with zero acceleration.
pub fn virtual_lead(follower: &CommonState) -> CommonState {
    CommonState::new(follower.p_lon + VIRTUAL_LEAD_DISTANCE, follower.v_lon, 0.0, follower.p_lat, 0.0, 0.0)
}

/// Distance of the stand-in lead vehicle.
pub const VIRTUAL_LEAD_DISTANCE: f64 = 500.0;
