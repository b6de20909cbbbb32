//! Monte Carlo rollout of an attack policy on a product MDP, estimating the
//! empirical goal-reaching rate with per-trial reproducible randomness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::product::ProductMdp;
use crate::ssp::StochasticPolicy;

pub const DEFAULT_MAX_STEPS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("policy does not cover reachable state {0}")]
    PolicyCoverage(String),
}

/// Outcome counts over all trials; `empirical_success_rate` is
/// successes / trials and `stderr` its binomial standard error.
#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub trials: u64,
    pub successes: u64,
    pub detections: u64,
    pub truncations: u64,
    pub empirical_success_rate: f64,
    pub stderr: f64,
    pub seed: u64,
}

fn sample_index(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = (usize, f64)>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (idx, w) in weights {
        acc += w;
        last = idx;
        if u < acc {
            return idx;
        }
    }
    // Rounding left a sliver of mass; attribute it to the final entry.
    last
}

/// Runs `trials` independent rollouts of `pi` on `mdp`. Each trial uses its
/// own RNG stream derived from `seed`, so results are reproducible and
/// independent of trial ordering.
pub fn simulate(
    mdp: &ProductMdp,
    pi: &StochasticPolicy,
    trials: u64,
    seed: u64,
    max_steps: usize,
) -> Result<SimReport, SimError> {
    let mut successes = 0u64;
    let mut detections = 0u64;
    let mut truncations = 0u64;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let mut z = sample_index(
            &mut rng,
            mdp.initial.iter().enumerate().map(|(i, &p)| (i, p)),
        );
        let mut steps = 0;
        loop {
            if mdp.is_final(z) {
                successes += 1;
                break;
            }
            if mdp.is_sink(z) {
                detections += 1;
                break;
            }
            let dist = pi.action_dist(z);
            if dist.is_empty() {
                if mdp.actions_at(z).next().is_some() {
                    return Err(SimError::PolicyCoverage(mdp.z_name(z)));
                }
                // Dead end: the attack is stuck without being detected.
                break;
            }
            if steps >= max_steps {
                truncations += 1;
                break;
            }
            steps += 1;
            let a = sample_index(&mut rng, dist.iter().copied());
            let trs = mdp.transitions(z, a).expect("policy only uses defined actions");
            z = sample_index(&mut rng, trs.iter().map(|t| (t.target, t.prob)));
        }
    }
    let rate = successes as f64 / trials as f64;
    Ok(SimReport {
        trials,
        successes,
        detections,
        truncations,
        empirical_success_rate: rate,
        stderr: (rate * (1.0 - rate) / trials as f64).sqrt(),
        seed,
    })
}
