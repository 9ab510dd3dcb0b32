use nalgebra::{DMatrix, Matrix3, Matrix4, Vector4};
use proptest::prelude::*;
use scmpc::policy::*;
use scmpc::types::*;

const T: f64 = 0.04;

fn gains() -> GainSet {
    synthesize_gains(&GainConfig::default(), T).unwrap()
}

/// Fixed-point Riccati recursion, run to a 1e-12 step.
fn riccati_fixed_point(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    for _ in 0..2_000_000 {
        let s = r + b.transpose() * &p * b;
        let k = s.try_inverse().unwrap() * b.transpose() * &p * a;
        let next = a.transpose() * &p * a - a.transpose() * &p * b * &k + q;
        let done = (&next - &p).amax() < 1e-12;
        p = next;
        if done {
            break;
        }
    }
    let s = r + b.transpose() * &p * b;
    s.try_inverse().unwrap() * b.transpose() * &p * a
}

fn triple(dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, dt, dt * dt / 2.0, 0.0, 1.0, dt, 0.0, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(3, 1, &[dt * dt * dt / 6.0, dt * dt / 2.0, dt]);
    (a, b)
}

#[test]
fn doubling_matches_fixed_point_recursion() {
    let (a, b) = triple(T);
    let q = DMatrix::identity(3, 3);
    let r = DMatrix::identity(1, 1);
    let k = lqr_gain(&a, &b, &q, &r).unwrap();
    let oracle = riccati_fixed_point(&a, &b, &q, &r);
    assert!((&k - &oracle).amax() < 1e-8, "{k} vs {oracle}");
}

#[test]
fn synthesized_gains_match_oracle_per_channel() {
    let cfg = GainConfig { k_lat: None, ..GainConfig::default() };
    let g = synthesize_gains(&cfg, T).unwrap();
    let (a, b) = triple(T);
    let oracle = riccati_fixed_point(&a, &b, &DMatrix::identity(3, 3), &DMatrix::from_element(1, 1, 10.0));
    for i in 0..3 {
        assert!((g.k_lon_dk[i] - oracle[(0, i)]).abs() < 1e-8);
        assert!((g.k_lat[i] - oracle[(0, i)]).abs() < 1e-8);
    }
    let a2 = DMatrix::from_row_slice(2, 2, &[1.0, T, 0.0, 1.0]);
    let b2 = DMatrix::from_row_slice(2, 1, &[T * T / 2.0, T]);
    let o2 = riccati_fixed_point(&a2, &b2, &DMatrix::identity(2, 2), &DMatrix::from_element(1, 1, 10.0));
    assert_eq!(g.k_lon_vt[0], 0.0);
    assert!((g.k_lon_vt[1] - o2[(0, 0)]).abs() < 1e-8 && (g.k_lon_vt[2] - o2[(0, 1)]).abs() < 1e-8);
}

#[test]
fn configured_lateral_gain_is_stable() {
    let cl = triple_closed_loop(&[1.15, 3.39, 3.58], T);
    let rho = spectral_radius(&DMatrix::from_iterator(3, 3, cl.iter().copied()));
    assert!(rho < 1.0, "spectral radius {rho}");
    assert_eq!(gains().k_lat, [1.15, 3.39, 3.58]);
}

#[test]
fn heavy_input_weight_drives_gains_to_zero() {
    let mut last_rho = 0.0;
    let mut last_k = f64::INFINITY;
    for r in [1e2, 1e4, 1e6, 1e8, 1e10] {
        let cfg = GainConfig { vt: LqrWeights::new(vec![1.0, 0.0], r), ..GainConfig::default() };
        let g = synthesize_gains(&cfg, T).unwrap();
        let cl = vt_closed_loop(&g.k_lon_vt, T);
        let rho = spectral_radius(&DMatrix::from_iterator(2, 2, cl.iter().copied()));
        assert!(rho < 1.0 && rho > last_rho, "r = {r}: rho {rho}");
        last_rho = rho;
        let k = g.k_lon_vt[1].abs().max(g.k_lon_vt[2].abs());
        assert!(k < last_k);
        last_k = k;
    }
    assert!(last_k < 1e-2);
    assert!(last_rho > 0.999);
}

#[test]
fn bad_weights_are_rejected() {
    let cfg = GainConfig { dk: LqrWeights::new(vec![1.0, 1.0, 1.0], 0.0), ..GainConfig::default() };
    assert!(synthesize_gains(&cfg, T).is_err());
    let cfg = GainConfig { dk: LqrWeights::new(vec![1.0, 1.0], 1.0), ..GainConfig::default() };
    assert!(synthesize_gains(&cfg, T).is_err());
    assert!(synthesize_gains(&GainConfig::default(), 0.0).is_err());
}

#[test]
fn vt_entries_match_closed_form() {
    let g = gains();
    let d = build_mode_dynamics(PolicyMode::ALL[1], &g, T, &LaneGeometry::default(), None).unwrap();
    let k2 = g.k_lon_vt[1];
    let k3 = g.k_lon_vt[2];
    assert!((d.f[(1, 1)] - (1.0 - k2 * T * T / 2.0)).abs() < 1e-15);
    assert!((d.f[(1, 2)] - (T - k3 * T * T / 2.0)).abs() < 1e-15);
    assert!((d.f[(2, 3)] - k2 * T).abs() < 1e-15);
    assert_eq!(d.e.fixed_rows::<4>(0).into_owned(), Vector4::zeros());
    assert!(!d.depends_on_lv);
    for i in 0..4 {
        for j in 4..7 {
            assert_eq!(d.f[(i, j)], 0.0);
            assert_eq!(d.f[(j, i)], 0.0);
        }
    }
}

#[test]
fn zero_gains_reduce_to_constant_acceleration() {
    let g = GainSet { k_lon_vt: [0.0; 3], k_lon_dk: [0.0; 3], k_lat: [0.0; 3], dk_matrix: DkMatrix::SymmetricK1 };
    let (f, e) = lon_block(Longitudinal::VT, &g, T, None).unwrap();
    let mut expected = Matrix4::identity();
    expected[(0, 1)] = T;
    expected[(0, 2)] = T * T / 2.0;
    expected[(1, 2)] = T;
    assert_eq!(f, expected);
    assert_eq!(e, Vector4::zeros());
}

#[test]
fn dk_coupling_matches_direct_arithmetic() {
    let g = gains();
    let [k1, k2, _] = g.k_lon_dk;
    let x = Vector4::<f64>::new(100.0, 20.0, 0.0, 0.0);
    let m = printed_dk_lv_coupling(&g, T);
    let got = m * x;
    // Row-by-row evaluation written out by hand.
    let t2 = T * T / 2.0;
    let t3 = T * T * T / 6.0;
    let expect = [
        (k1 * t3 - 1.0) * 100.0 + (k2 * t3 - T) * 20.0,
        (k1 * t2) * 100.0 + (k2 * t2 - 1.0) * 20.0,
        (k1 * T) * 100.0 + (k2 * T) * 20.0,
        0.0,
    ];
    for i in 0..4 {
        assert!((got[i] - expect[i]).abs() < 1e-12, "row {i}");
    }
    // The absolute-frame drive adds the lead vehicle's own propagation.
    let lv = CommonState::new(100.0, 20.0, 0.0, 26.88, 0.0, 0.0);
    let (_, e) = lon_block(Longitudinal::DK, &g, T, Some(&lv)).unwrap();
    let a = scmpc::types::integrator_a(T);
    let prop = a * nalgebra::Vector3::new(100.0, 20.0, 0.0);
    for i in 0..3 {
        assert!((e[i] - (got[i] + prop[i])).abs() < 1e-10, "row {i}");
    }
}

fn on_fixed_point(mode: PolicyMode, g: &GainSet, lanes: &LaneGeometry) -> (nalgebra::SVector<f64, 7>, Option<CommonState>) {
    let lat = lanes.centerline(mode.target_lane);
    match mode.longitudinal {
        Longitudinal::VT => (nalgebra::SVector::<f64, 7>::from([0.0, 25.0, 0.0, 25.0, lat, 0.0, 0.0]), None),
        Longitudinal::DK => {
            let gap_time = 1.5;
            let lv = CommonState::new(100.0, 22.0, 0.0, lat, 0.0, 0.0);
            let _ = g;
            (nalgebra::SVector::<f64, 7>::from([100.0 - gap_time * 22.0, 22.0, 0.0, gap_time, lat, 0.0, 0.0]), Some(lv))
        }
    }
}

#[test]
fn fixed_points_are_stationary() {
    let g = gains();
    let lanes = LaneGeometry::default();
    for mode in PolicyMode::ALL {
        let (mut z, mut lv) = on_fixed_point(mode, &g, &lanes);
        let z0 = z;
        for _ in 0..1000 {
            let d = build_mode_dynamics(mode, &g, T, &lanes, lv.as_ref()).unwrap();
            z = d.f * z + d.e;
            if let Some(l) = lv.as_mut() {
                l.p_lon += l.v_lon * T;
            }
        }
        for i in [1, 2, 3, 4, 5, 6] {
            assert!((z[i] - z0[i]).abs() < 1e-9, "{mode}: component {i} drifted to {}", z[i]);
        }
    }
}

#[test]
fn as_printed_variant_has_no_following_equilibrium() {
    let g = GainSet { dk_matrix: DkMatrix::AsPrinted, ..gains() };
    let lanes = LaneGeometry::default();
    let mode = PolicyMode::ALL[4];
    let (mut z, mut lv) = on_fixed_point(mode, &g, &lanes);
    for _ in 0..1000 {
        let d = build_mode_dynamics(mode, &g, T, &lanes, lv.as_ref()).unwrap();
        z = d.f * z + d.e;
        lv.as_mut().unwrap().p_lon += 22.0 * T;
    }
    assert!((z[1] - 22.0).abs() > 1e-3);
}

/// The VT loop is underdamped, so the speed error itself changes sign once;
/// the quadratic cost-to-go of the regulator is what decreases every step.
#[test]
fn vt_error_decays_monotonically() {
    let g = gains();
    let (f, _) = lon_block(Longitudinal::VT, &g, T, None).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[1.0, T, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[T * T / 2.0, T]);
    let p = cost_to_go(&a, &b, &DMatrix::identity(2, 2), &DMatrix::from_element(1, 1, 10.0));
    for (v0, a0) in [(15.0, 0.0), (45.0, 0.0), (30.0, 2.0), (0.0, -3.0)] {
        let mut z = Vector4::<f64>::new(0.0, v0, a0, 30.0);
        let mut prev = f64::INFINITY;
        let mut first = 0.0;
        for k in 0..=500 {
            let e = nalgebra::Vector2::new(z[1] - z[3], z[2]);
            let lyap = (e.transpose() * p * e).to_scalar();
            if k >= 50 {
                assert!(lyap < prev, "v0 {v0}: step {k}: {lyap} ≥ {prev}");
                prev = lyap;
                if k == 50 {
                    first = lyap;
                }
            }
            z = f * z;
        }
        assert!(prev < 1e-6 * first);
        assert!((z[1] - 30.0).abs() < 1e-3 * (v0 - 30.0f64).abs().max(1.0));
    }
}

fn cost_to_go(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> nalgebra::Matrix2<f64> {
    let mut p = q.clone();
    for _ in 0..2_000_000 {
        let s = r + b.transpose() * &p * b;
        let next = a.transpose() * &p * a - a.transpose() * &p * b * s.try_inverse().unwrap() * b.transpose() * &p * a + q;
        let done = (&next - &p).amax() < 1e-12;
        p = next;
        if done {
            break;
        }
    }
    nalgebra::Matrix2::from_iterator(p.iter().copied())
}

#[test]
fn lateral_converges_to_centerline() {
    let g = gains();
    let lanes = LaneGeometry::default();
    for lane in Lane::ALL {
        let (f, e) = lat_block(lane, &g, T, &lanes);
        let mut x = nalgebra::Vector3::new(26.88, 0.3, 0.0);
        for _ in 0..1000 {
            x = f * x + e;
        }
        assert!((x[0] - lanes.centerline(lane)).abs() < 1e-6, "lane {lane}: {}", x[0]);
    }
    let _: Matrix3<f64> = triple_closed_loop(&g.k_lat, T);
}

proptest! {
    #[test]
    fn synthesis_stabilizes_random_weights(q in prop::array::uniform3(0.01f64..100.0), r in 0.01f64..100.0, dt in 0.01f64..0.5) {
        let cfg = GainConfig {
            dk: LqrWeights::new(q.to_vec(), r),
            lat: LqrWeights::new(q.to_vec(), r),
            k_lat: None,
            ..GainConfig::default()
        };
        let g = synthesize_gains(&cfg, dt).unwrap();
        let cl = triple_closed_loop(&g.k_lon_dk, dt);
        prop_assert!(spectral_radius(&DMatrix::from_iterator(3, 3, cl.iter().copied())) < 1.0);
    }
}
