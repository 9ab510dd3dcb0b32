use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scmpc::imm::PredictionFan;
use scmpc::scenario::*;
use scmpc::types::*;

fn mode(lon: Longitudinal, lane: u8) -> PolicyMode {
    PolicyMode { longitudinal: lon, target_lane: Lane::new(lane).unwrap() }
}

fn fan(id: u32, mu: [f64; M]) -> PredictionFan {
    let modes = (0..M)
        .map(|i| (0..=3).map(|k| CommonState::new(k as f64 + 10.0 * i as f64, 1.0, 0.0, 26.88, 0.0, 0.0)).collect())
        .collect();
    PredictionFan { id, mu, modes, fused: vec![CommonState::default(); 4] }
}

/// Mixed-radix counting over all M^V codes; an independent enumeration.
fn oracle_products(mus: &[[f64; M]]) -> Vec<(Vec<usize>, f64)> {
    let v = mus.len();
    let total = M.pow(v as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut digits = vec![0; v];
        let mut c = code;
        for d in (0..v).rev() {
            digits[d] = c % M;
            c /= M;
        }
        let p: f64 = digits.iter().enumerate().map(|(j, &i)| mus[j][i]).product();
        if p > 0.0 {
            out.push((digits, p));
        }
    }
    out
}

fn random_table(rng: &mut ChaCha8Rng) -> [f64; M] {
    let mut mu = [0.0; M];
    for m in mu.iter_mut() {
        if rng.random_bool(0.7) {
            *m = rng.random_range(0.0..1.0f64).powi(3);
        }
    }
    let s: f64 = mu.iter().sum();
    if s == 0.0 {
        mu[rng.random_range(0..M)] = 1.0;
        return mu;
    }
    mu.map(|m| m / s)
}

#[test]
fn no_vehicles_gives_one_certain_scenario() {
    let s = enumerate_scenarios(&[], DEFAULT_CAP).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].probability, 1.0);
    assert!(s[0].assignment.is_empty());
}

#[test]
fn case_one_probability_shape() {
    let mut a = [0.0; M];
    a[mode(Longitudinal::VT, 2).index()] = 0.913;
    a[mode(Longitudinal::VT, 3).index()] = 0.087;
    let mut b = [0.0; M];
    b[mode(Longitudinal::VT, 2).index()] = 1.0;
    let s = enumerate_scenarios(&[fan(1, a), fan(2, b)], DEFAULT_CAP).unwrap();
    let probs: Vec<f64> = s.iter().map(|s| s.probability).collect();
    assert_eq!(probs, vec![0.913, 0.087]);
    assert_eq!(s[1].assignment[&1], mode(Longitudinal::VT, 3));
    assert_eq!(s[1].assignment[&2], mode(Longitudinal::VT, 2));
    // Each scenario carries the vehicle's trajectory under its assigned mode.
    assert_eq!(s[1].trajectories[&1][0].p_lon, 20.0);
    let f = filter_renormalize(s, DEFAULT_THRESHOLD).unwrap();
    assert_eq!(f.len(), 2);
}

#[test]
fn uniform_product() {
    let s = enumerate_scenarios(&[fan(1, [1.0 / 6.0; M]), fan(2, [1.0 / 6.0; M])], DEFAULT_CAP).unwrap();
    assert_eq!(s.len(), 36);
    for sc in &s {
        assert!((sc.probability - 1.0 / 36.0).abs() < 1e-15);
    }
}

fn with_probs(p: &[f64]) -> Vec<Scenario> {
    p.iter()
        .map(|&probability| Scenario { assignment: Default::default(), probability, trajectories: Default::default() })
        .collect()
}

#[test]
fn filter_examples() {
    let f = filter_renormalize(with_probs(&[0.6, 0.3, 0.1]), 0.2).unwrap();
    let p: Vec<f64> = f.iter().map(|s| s.probability).collect();
    assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);

    let f = filter_renormalize(with_probs(&[0.6, 0.3, 0.1]), 0.0).unwrap();
    assert_eq!(f.iter().map(|s| s.probability).collect::<Vec<_>>(), vec![0.6, 0.3, 0.1]);

    let case1 = [0.241, 0.186, 0.573];
    let f = filter_renormalize(with_probs(&case1), DEFAULT_THRESHOLD).unwrap();
    assert!((f.iter().map(|s| s.probability).sum::<f64>() - 1.0).abs() < 1e-12);

    assert!(matches!(filter_renormalize(with_probs(&[0.5, 0.5]), 0.6), Err(scmpc::Error::AllBelowThreshold(_))));
}

#[test]
fn cap_is_enforced() {
    let fans: Vec<_> = (0..5).map(|i| fan(i, [1.0 / 6.0; M])).collect();
    assert!(matches!(enumerate_scenarios(&fans, DEFAULT_CAP), Err(scmpc::Error::ScenarioCap { count: 7776, .. })));
    // Threshold-first generation handles the same input.
    assert!(prune_generate(&fans, 1e-4, DEFAULT_CAP).is_err());
    let s = prune_generate(&fans, 1e-4, 10_000).unwrap();
    assert_eq!(s.len(), 7776);
    let s = prune_generate(&fans, 2e-4, DEFAULT_CAP);
    assert!(matches!(s, Err(scmpc::Error::AllBelowThreshold(_))));
}

#[test]
fn enumeration_matches_oracle_on_random_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let v = rng.random_range(0..=4);
        let mus: Vec<[f64; M]> = (0..v).map(|_| random_table(&mut rng)).collect();
        let fans: Vec<_> = mus.iter().enumerate().map(|(i, &mu)| fan(i as u32 + 1, mu)).collect();
        let got = enumerate_scenarios(&fans, DEFAULT_CAP).unwrap();
        let want = oracle_products(&mus);
        assert_eq!(got.len(), want.len());
        for (g, (digits, p)) in got.iter().zip(&want) {
            assert_eq!((g.probability - p).abs(), 0.0);
            for (j, &i) in digits.iter().enumerate() {
                assert_eq!(g.assignment[&(j as u32 + 1)].index(), i);
            }
        }
        let total: f64 = got.iter().map(|s| s.probability).sum();
        assert!((total - 1.0).abs() < 1e-9);

        let threshold = rng.random_range(0.0..0.3);
        let max_p = got.iter().map(|s| s.probability).fold(0.0, f64::max);
        if threshold >= max_p {
            continue;
        }
        let filtered = filter_renormalize(got.clone(), threshold).unwrap();
        assert!((filtered.iter().map(|s| s.probability).sum::<f64>() - 1.0).abs() < 1e-9);
        let kept: Vec<&Scenario> = got.iter().filter(|s| s.probability >= threshold).collect();
        for (a, b) in kept.iter().zip(kept.iter().skip(1)) {
            let fa = filtered.iter().find(|s| s.assignment == a.assignment).unwrap();
            let fb = filtered.iter().find(|s| s.assignment == b.assignment).unwrap();
            let r0 = a.probability / b.probability;
            let r1 = fa.probability / fb.probability;
            assert!((r0 - r1).abs() <= 1e-12 * r0.abs().max(1.0));
        }
        let pruned = prune_generate(&fans, threshold, DEFAULT_CAP).unwrap();
        assert_eq!(pruned.len(), filtered.len());
        for (a, b) in pruned.iter().zip(&filtered) {
            assert_eq!(a.assignment, b.assignment);
            assert!((a.probability - b.probability).abs() < 1e-12);
        }
    }
}

fn scene_with(targets: Vec<(u32, f64, f64, f64)>) -> SceneSnapshot {
    let ego = Vehicle { params: VehicleParams::new(0, 4.5, 1.9).unwrap(), state: CommonState::new(0.0, 30.0, 0.0, 26.88, 0.0, 0.0) };
    let targets = targets
        .into_iter()
        .map(|(id, p, v, lat)| Vehicle { params: VehicleParams::new(id, 4.5, 1.9).unwrap(), state: CommonState::new(p, v, 0.0, lat, 0.0, 0.0) })
        .collect();
    SceneSnapshot::new(0.0, ego, targets, LaneGeometry::default()).unwrap()
}

#[test]
fn braking_kinematics() {
    let x = CommonState::new(50.0, 23.04, 0.5, 26.88, 0.1, 0.0);
    let t = braking_trajectory(&x, -3.0, 30, 0.4);
    let stop = t.iter().position(|s| s.v_lon == 0.0).unwrap();
    assert_eq!(stop, (23.04f64 / 1.2).ceil() as usize);
    assert_eq!(stop, 20);
    assert!((t[30].p_lon - 50.0 - 88.4736).abs() < 1e-9);
    for k in 0..19 {
        assert!((t[k + 1].v_lon - (t[k].v_lon - 1.2)).abs() < 1e-12);
    }
    let still = braking_trajectory(&CommonState::new(3.0, 0.0, 0.0, 22.98, 0.0, 0.0), -3.0, 10, 0.4);
    assert!(still.iter().all(|s| s.p_lon == 3.0 && s.v_lon == 0.0));
}

#[test]
fn worst_case_picks_nearest_lead_per_lane() {
    let scene = scene_with(vec![(1, 60.0, 20.0, 26.88), (2, 30.0, 25.0, 26.88), (3, -20.0, 30.0, 22.98), (4, 40.0, 30.0, 24.9)]);
    let w = build_worst_case(&scene, -3.0, 15, 0.4).unwrap();
    // Vehicle 4 straddles lanes 1 and 2 but is further than vehicle 2 in lane 2.
    assert_eq!(w.lead(Lane::new(2).unwrap()).id, Some(2));
    assert_eq!(w.lead(Lane::new(1).unwrap()).id, Some(4));
    let l3 = w.lead(Lane::new(3).unwrap());
    assert_eq!(l3.id, None);
    assert_eq!(l3.trajectory[0].p_lon, 500.0);
    assert_eq!(l3.trajectory[0].p_lat, 31.3);
    assert_eq!(rear_in_lane(&scene, Lane::new(1).unwrap()).unwrap().params.id, 3);
    assert!(build_worst_case(&scene, 3.0, 15, 0.4).is_err());
}

#[test]
fn virtual_lead_never_binds_at_highway_speeds() {
    for v in [5.0, 20.0, 30.0, 40.0] {
        let scene = scene_with(vec![]);
        let mut scene = scene;
        scene.ego.state.v_lon = v;
        let w = build_worst_case(&scene, -3.0, 22, 0.4).unwrap();
        let lv = &w.lead(Lane::new(2).unwrap()).trajectory;
        // Ego braking at −4 from v stops well before the virtual lead does.
        let ego_stop = v * v / 8.0;
        assert!(lv[22].p_lon - ego_stop - 0.4 * v - 9.6 > 0.0);
        assert!(500.0 > v * v / 6.0 + 0.4 * v + 9.6);
    }
}

proptest! {
    #[test]
    fn braking_is_monotone(p0 in -100.0f64..100.0, v0 in 0.0f64..45.0, a in -8.0f64..-0.5, tp in 0.05f64..1.0) {
        let t = braking_trajectory(&CommonState::new(p0, v0, 0.0, 26.88, 0.0, 0.0), a, 40, tp);
        for w in t.windows(2) {
            prop_assert!(w[1].p_lon >= w[0].p_lon);
            prop_assert!(w[1].v_lon <= w[0].v_lon);
            prop_assert!(w[1].v_lon >= 0.0);
        }
        prop_assert!(t[40].p_lon <= p0 + v0 * v0 / (-2.0 * a) + 1e-9);
    }

    #[test]
    fn prune_equals_enumerate_then_filter(seed in 0u64..100_000, threshold in 0.0f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = rng.random_range(1..=3);
        let fans: Vec<_> = (0..v).map(|i| fan(i + 1, random_table(&mut rng))).collect();
        let all = enumerate_scenarios(&fans, DEFAULT_CAP).unwrap();
        let max_p = all.iter().map(|s| s.probability).fold(0.0, f64::max);
        prop_assume!(threshold < max_p);
        let a = filter_renormalize(all, threshold).unwrap();
        let b = prune_generate(&fans, threshold, DEFAULT_CAP).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.assignment, &y.assignment);
            prop_assert!((x.probability - y.probability).abs() < 1e-12);
        }
    }
}
