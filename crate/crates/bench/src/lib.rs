//! Shared fixtures for the benchmarks.

use pros_core::sampling::draw_pros;
use pros_core::simulation::replicate_rng;
use pros_core::{Design, Distribution, MisplacementMatrix, ProsSample};

/// A standard-normal PROS sample drawn under the exchangeable misplacement
/// family with diagonal `alpha0`.
pub fn normal_pros_sample(n: usize, m: usize, cycles: usize, alpha0: f64, seed: u64) -> ProsSample {
    let design = Design::new(n, m, cycles).expect("valid design");
    let alpha = MisplacementMatrix::alpha0_family(n, alpha0).expect("valid alpha0");
    draw_pros(
        &Distribution::STANDARD_NORMAL,
        &design,
        &alpha,
        &mut replicate_rng(seed, 0, 2),
    )
    .expect("draw succeeds")
}
