mod common;

use common::synth::run_identification;
use scmpc::types::PolicyMode;
use std::time::Instant;

#[test]
fn identification_rate() {
    let t0 = Instant::now();
    let mut hits = [0; 6];
    for mode in PolicyMode::ALL {
        for seed in 0..20 {
            let r = run_identification(mode, seed, 50);
            assert!(r.worst_sum_error < 1e-9);
            if r.true_mu.iter().any(|&m| m > 0.9) {
                hits[mode.index()] += 1;
            }
        }
    }
    println!("hits {hits:?} in {:?}", t0.elapsed());
    assert!(hits.iter().sum::<usize>() >= 114);
}
