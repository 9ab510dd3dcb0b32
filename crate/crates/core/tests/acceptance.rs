//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit status
//! if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::synth::run_identification;
use common::{oracle_miqp, oracle_qp, random_miqp, random_qp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scmpc::imm::PredictionFan;
use scmpc::mpc::minimal_stopping_horizon;
use scmpc::par;
use scmpc::qp::{solve_miqp, solve_qp, MiqpProblem, QpStatus};
use scmpc::scenario::{enumerate_scenarios, filter_renormalize, prune_generate, DEFAULT_CAP, DEFAULT_THRESHOLD};
use scmpc::sim::*;
use scmpc::types::{CommonState, Lane, Longitudinal, PolicyMode, M};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ------------------------------------------------------------ 1 and 8

struct StressRun {
    seed: u64,
    targets: usize,
    out: RunOutput,
}

fn stress_runs() -> Result<(Vec<StressRun>, f64), String> {
    let t0 = Instant::now();
    let seeds: Vec<u64> = (0..200).collect();
    let runs = par::map(&seeds, |&seed| {
        let mut cfg = stress(seed);
        cfg.verify_feasibility = true;
        let SceneSpec::Stress(spec) = &cfg.scene else { unreachable!() };
        let targets = draw_stress_scene(&cfg, spec, seed).map_err(|e| format!("seed {seed}: {e}"))?.targets.len();
        let out = run_closed_loop(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        Ok(StressRun { seed, targets, out })
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, String>>()?;
    Ok((runs, t0.elapsed().as_secs_f64()))
}

fn recursive_feasibility(runs: &[StressRun], secs: f64) -> Outcome {
    let cfg = scmpc::mpc::ControllerConfig::default();
    let mut min_margin = f64::INFINITY;
    let mut raised = 0;
    let mut counts = [0; 3];
    for r in runs {
        let s = &r.out.summary;
        check((1..=3).contains(&r.targets), format!("seed {}: {} targets", r.seed, r.targets))?;
        counts[r.targets - 1] += 1;
        check(s.initially_feasible, format!("seed {}: infeasible first step", r.seed))?;
        match s.status {
            RunStatus::Completed => {}
            RunStatus::Collision { id, time } => return Err(format!("seed {}: collision with {id} at {time:.2} s", r.seed)),
            RunStatus::Infeasible { time } => return Err(format!("seed {}: infeasible at {time:.2} s", r.seed)),
        }
        check(s.emergency_steps == 0, format!("seed {}: {} emergency steps", r.seed, s.emergency_steps))?;
        if let Some(m) = s.min_gap_margin {
            check(m >= 0.0, format!("seed {}: same-lane gap {m:.4} m below the safety distance", r.seed))?;
            min_margin = min_margin.min(m);
        }
        for st in &r.out.steps {
            let need = minimal_stopping_horizon(st.ego.v_lon.max(0.0), cfg.a_lon.min, cfg.tp).steps;
            check(st.horizon >= need.max(cfg.horizon), format!("seed {}: horizon {} below {need}", r.seed, st.horizon))?;
            raised += (st.horizon > cfg.horizon) as usize;
        }
    }
    check(secs <= 300.0, format!("took {secs:.0} s"))?;
    Ok(format!(
        "{} scenes ({}/{}/{} with 1/2/3 targets), no collisions or infeasibilities, min gap margin {min_margin:.3} m, horizon raised at {raised} steps, {secs:.1} s",
        runs.len(),
        counts[0],
        counts[1],
        counts[2]
    ))
}

fn shift_property(runs: &[StressRun]) -> Outcome {
    let mut checked = 0;
    let mut passed = 0;
    let mut worst: f64 = 0.0;
    for r in runs {
        let sc = r.out.summary.shift_checks;
        let expected = r.out.steps.len().saturating_sub(1);
        check(sc.checked == expected, format!("seed {}: {} of {expected} steps re-checked", r.seed, sc.checked))?;
        checked += sc.checked;
        passed += sc.passed;
        worst = worst.max(sc.max_violation);
    }
    check(passed == checked, format!("{passed}/{checked} shifted plans feasible"))?;
    Ok(format!("{passed}/{checked} shifted plans feasible, largest violation {worst:.1e}"))
}

// ------------------------------------------------------------ 2

fn stopping_horizon() -> Outcome {
    check(minimal_stopping_horizon(34.8, -4.0, 0.4).steps == 22, "34.8 m/s")?;
    check(minimal_stopping_horizon(1.6, -4.0, 0.4).steps == 1, "exact boundary 1.6 m/s")?;
    check(minimal_stopping_horizon(0.0, -4.0, 0.4).steps == 0, "standstill")?;
    for i in 1..=400u32 {
        // Braking in integer units of 0.1 m/s: 16 units per 0.4 s step.
        let mut left = i as i64;
        let mut steps = 0;
        while left > 0 {
            left -= 16;
            steps += 1;
        }
        let v0 = i as f64 / 10.0;
        let got = minimal_stopping_horizon(v0, -4.0, 0.4).steps;
        check(got == steps, format!("v0 = {v0}: {got} vs {steps}"))?;
    }
    Ok("examples and 400-point grid match step-by-step braking exactly".into())
}

// ------------------------------------------------------------ 3

fn solver_oracles() -> Outcome {
    let t0 = Instant::now();
    let mut worst_qp: f64 = 0.0;
    for seed in 0..500u64 {
        let p = random_qp(10_000 + seed, 20, 40);
        let s = solve_qp(&p).map_err(|e| e.to_string())?;
        check(s.status == QpStatus::Optimal, format!("QP {seed}: {:?}", s.status))?;
        let o = oracle_qp(&p).ok_or(format!("QP {seed}: oracle failed"))?;
        let d = (s.objective - o.objective).abs();
        check(d <= 1e-5, format!("QP {seed}: objective {} vs oracle {}", s.objective, o.objective))?;
        worst_qp = worst_qp.max(d);
    }
    let mut compared = 0;
    let mut worst_miqp: f64 = 0.0;
    for seed in 0..100u64 {
        let nb = 1 + (seed as usize % 8);
        let (p, bins) = random_miqp(20_000 + seed, nb);
        let Some((assign, obj, second)) = oracle_miqp(&p, &bins) else { continue };
        if second - obj < 1e-7 {
            // Tied assignments: the argmin is not unique.
            continue;
        }
        let s = solve_miqp(&MiqpProblem::new(p, bins)).map_err(|e| e.to_string())?;
        check(s.assignment == assign, format!("MIQP {seed}: assignment {:?} vs {:?}", s.assignment, assign))?;
        let d = (s.qp.objective - obj).abs();
        check(d <= 1e-6, format!("MIQP {seed}: objective {} vs {obj}", s.qp.objective))?;
        worst_miqp = worst_miqp.max(d);
        compared += 1;
    }
    check(compared >= 95, format!("only {compared} MIQPs without ties"))?;
    let secs = t0.elapsed().as_secs_f64();
    check(secs <= 120.0, format!("took {secs:.0} s"))?;
    Ok(format!("500 QPs (max gap {worst_qp:.1e}), {compared}/100 MIQPs exact (max gap {worst_miqp:.1e}), {secs:.1} s"))
}

// ------------------------------------------------------------ 4

fn identification() -> Outcome {
    let mut hits = 0;
    let mut worst_sum: f64 = 0.0;
    for mode in PolicyMode::ALL {
        for seed in 0..20 {
            let r = run_identification(mode, seed, 50);
            worst_sum = worst_sum.max(r.worst_sum_error);
            hits += r.true_mu.iter().any(|&m| m > 0.9) as usize;
        }
    }
    check(worst_sum < 1e-9, format!("probabilities sum off by {worst_sum:.1e}"))?;
    check(hits * 100 >= 95 * 120, format!("{hits}/120 runs identified"))?;
    Ok(format!("{hits}/120 runs reach > 0.9 within 50 cycles, max |Σμ − 1| = {worst_sum:.1e}"))
}

// ------------------------------------------------------------ 5

fn fan(id: u32, mu: [f64; M]) -> PredictionFan {
    let modes = (0..M).map(|_| vec![CommonState::default(); 2]).collect();
    PredictionFan { id, mu, modes, fused: vec![CommonState::default(); 2] }
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

fn scenario_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut filtered_cases = 0;
    for case in 0..1000 {
        let v = rng.random_range(1..=4);
        let fans: Vec<_> = (0..v).map(|i| fan(i + 1, random_table(&mut rng))).collect();
        let all = enumerate_scenarios(&fans, DEFAULT_CAP).map_err(|e| e.to_string())?;
        let total: f64 = all.iter().map(|s| s.probability).sum();
        check((total - 1.0).abs() < 1e-9, format!("table {case}: enumeration sums to {total}"))?;
        let threshold = rng.random_range(0.0..0.3);
        let max_p = all.iter().map(|s| s.probability).fold(0.0, f64::max);
        if threshold >= max_p {
            continue;
        }
        let kept: Vec<_> = all.iter().filter(|s| s.probability >= threshold).cloned().collect();
        let f = filter_renormalize(all, threshold).map_err(|e| e.to_string())?;
        let total: f64 = f.iter().map(|s| s.probability).sum();
        check((total - 1.0).abs() < 1e-9, format!("table {case}: survivors sum to {total}"))?;
        check(f.len() == kept.len(), format!("table {case}: {} survivors, expected {}", f.len(), kept.len()))?;
        for (a, b) in kept.iter().zip(kept.iter().skip(1)) {
            let fa = f.iter().find(|s| s.assignment == a.assignment).ok_or("survivor lost")?;
            let fb = f.iter().find(|s| s.assignment == b.assignment).ok_or("survivor lost")?;
            let (r0, r1) = (a.probability / b.probability, fa.probability / fb.probability);
            check((r0 - r1).abs() <= 1e-12 * r0.max(1.0), format!("table {case}: ratio {r0} became {r1}"))?;
        }
        let pruned = prune_generate(&fans, threshold, DEFAULT_CAP).map_err(|e| e.to_string())?;
        check(pruned.len() == f.len(), format!("table {case}: pruned search differs"))?;
        filtered_cases += 1;
    }
    // Case 1: TV1 undecided between keeping lane 1 and moving to lane 2,
    // TV2 certain to keep lane 2.
    let vt = |lane: u8| PolicyMode { longitudinal: Longitudinal::VT, target_lane: Lane::new(lane).unwrap() }.index();
    let mut a = [0.0; M];
    a[vt(1)] = 0.913;
    a[vt(2)] = 0.087;
    let mut b = [0.0; M];
    b[vt(2)] = 1.0;
    let s = filter_renormalize(enumerate_scenarios(&[fan(1, a), fan(2, b)], DEFAULT_CAP).map_err(|e| e.to_string())?, DEFAULT_THRESHOLD)
        .map_err(|e| e.to_string())?;
    let p: Vec<f64> = s.iter().map(|s| s.probability).collect();
    check(p.len() == 2 && (p[0] - 0.913).abs() < 1e-12 && (p[1] - 0.087).abs() < 1e-12, format!("case-1 shapes {p:?}"))?;
    Ok(format!("1000 tables sum to 1 ({filtered_cases} also thresholded, ratios kept), case-1 shapes {{0.913, 0.087}}"))
}

// ------------------------------------------------------------ 6 and 7

fn case_one() -> Outcome {
    let cfg = case1();
    let out = run_closed_loop(&cfg).map_err(|e| e.to_string())?;
    let s = &out.summary;
    check(s.status == RunStatus::Completed, format!("{:?}", s.status))?;
    let switch = out
        .steps
        .iter()
        .find(|st| st.mode.as_deref().is_some_and(|m| m.starts_with("lane-change")))
        .ok_or("never selected a lane change")?;
    check(switch.target_lane == Some(Lane::new(1).unwrap()), format!("changed towards {:?}", switch.target_lane))?;
    let center = cfg.lanes.centerlines[0];
    // First time from which the ego stays within ±0.2 m of the lane-1 line.
    let settled = out
        .steps
        .iter()
        .enumerate()
        .find(|(i, _)| out.steps[*i..].iter().all(|st| (st.ego.p_lat - center).abs() <= 0.2))
        .map(|(_, st)| st.time)
        .ok_or("never settled on the lane-1 centerline")?;
    check((s.final_ego.p_lat - center).abs() <= 0.2, format!("final lateral position {:.3}", s.final_ego.p_lat))?;
    let took = settled - switch.time;
    check(took <= 3.0 + 1e-9, format!("lateral transition took {took:.1} s"))?;
    let margin = s.min_gap_margin.unwrap_or(f64::INFINITY);
    check(margin >= 0.0, format!("gap margin {margin:.3} m"))?;
    Ok(format!(
        "lane change selected at {:.1} s, within ±0.2 m of 22.98 m after {took:.1} s (final {:.3} m), min gap margin {margin:.2} m",
        switch.time, s.final_ego.p_lat
    ))
}

fn case_two() -> Outcome {
    let cfg = case2();
    let out = run_closed_loop(&cfg).map_err(|e| e.to_string())?;
    let s = &out.summary;
    check(s.status == RunStatus::Completed, format!("{:?}", s.status))?;
    let lane2 = Lane::new(2).unwrap();
    check(s.lane_changes.is_empty() && out.steps.iter().all(|st| st.lane == lane2), "left lane 2")?;
    check(s.final_lane == lane2, "final lane")?;
    let SceneSpec::Synthetic(scene) = &cfg.scene else { unreachable!() };
    let tv2 = scene.targets.iter().find(|t| t.vehicle.id == 2).ok_or("no TV2")?.vehicle.state.v_lon;
    let dv = (s.final_ego.v_lon - tv2).abs();
    check(dv <= 1.0, format!("final speed {:.2} vs TV2 {tv2:.2}", s.final_ego.v_lon))?;
    let hw = s.min_headway_margin.ok_or("no lead vehicle seen")?;
    check(hw >= 0.0, format!("headway margin {hw:.3} m"))?;
    let gap = s.min_gap_margin.ok_or("no lead vehicle seen")?;
    check(gap >= 0.0, format!("gap margin {gap:.3} m"))?;
    Ok(format!(
        "stays in lane 2, final speed {:.2} m/s vs TV2 {tv2:.2} m/s, min headway margin {hw:.2} m",
        s.final_ego.v_lon
    ))
}

// ------------------------------------------------------------ 9 and 10

fn performance() -> Outcome {
    let r = bench(&ExperimentConfig::default(), 1, 100).map_err(|e| e.to_string())?;
    check(r.incidents == 0, format!("{} incidents", r.incidents))?;
    check(r.step.p95_ms <= 50.0, format!("p95 {:.1} ms", r.step.p95_ms))?;
    Ok(format!(
        "{} steps over 100 scenes: p50 {:.1} ms, p95 {:.1} ms (mean horizon {:.1}, parallel {})",
        r.step.samples, r.step.p50_ms, r.step.p95_ms, r.mean_horizon, r.parallel
    ))
}

fn determinism() -> Outcome {
    let mut noisy = stress(7);
    noisy.measurement_noise = Some([0.2, 0.1, 0.1, 0.05, 0.02, 0.02]);
    noisy.verify_feasibility = true;
    for cfg in [case1(), noisy] {
        let bytes = || -> Result<Vec<u8>, String> {
            let out = run_closed_loop(&cfg).map_err(|e| e.to_string())?;
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &out.steps).map_err(|e| e.to_string())?;
            Ok(buf)
        };
        let (a, b) = (bytes()?, bytes()?);
        check(!a.is_empty() && a == b, format!("{}: logs differ", cfg.name))?;
    }
    Ok("case1 and a noisy stress scene give byte-identical JSONL on repeat".into())
}

fn main() {
    let stress = stress_runs();
    let criteria: Vec<Criterion> = vec![
        ("recursive-feasibility stress", Box::new(|| stress.as_ref().map_err(Clone::clone).and_then(|(r, s)| recursive_feasibility(r, *s)))),
        ("minimal stopping horizon", Box::new(stopping_horizon)),
        ("QP/MIQP oracle equivalence", Box::new(solver_oracles)),
        ("IMM identification", Box::new(identification)),
        ("scenario algebra", Box::new(scenario_algebra)),
        ("case 1 lane change", Box::new(case_one)),
        ("case 2 car following", Box::new(case_two)),
        ("feasibility shift property", Box::new(|| stress.as_ref().map_err(Clone::clone).and_then(|(r, _)| shift_property(r)))),
        ("per-step latency budget", Box::new(performance)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
