//! Shared fixtures for the criterion benchmarks in `benches/`.

use ebf_core::agents::Environment;
use ebf_core::harness::make_riverswim;
use ebf_core::trajectory::{Step, TrajectoryRecorder};
use ebf_core::{rng, ConfidenceParams, ConfidenceSet, Mdp};
use rand::Rng;

/// RiverSwim with `n` states and a uniformly random history of `steps` steps.
pub fn riverswim_history(n: usize, steps: usize, seed: u64) -> (Mdp, TrajectoryRecorder) {
    let mdp = make_riverswim(n).expect("n >= 2");
    let mut env = Environment::new(&mdp, rng::stream(seed, "bench/env"));
    let mut policy = rng::stream(seed, "bench/policy");
    let mut rec = TrajectoryRecorder::new(n, 2);
    let mut s = mdp.initial_state();
    for _ in 0..steps {
        let a = policy.random_range(0..2);
        let (r, next) = env.step(s, a);
        rec.push(Step::new(s, a, r, next)).expect("valid step");
        s = next;
    }
    (mdp, rec)
}

pub fn confidence_set(rec: &TrajectoryRecorder, h_bound: f64, horizon: u64) -> ConfidenceSet {
    let params = ConfidenceParams::new(h_bound, 0.05, horizon).expect("valid params");
    ConfidenceSet::new(&rec.stats(), rec.pair_summaries(), &params)
}
