//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Monte Carlo criteria run at full replication by default. Set
//! `PROS_ACCEPTANCE=smoke` for the 1000-replicate variant of the efficiency
//! tables, checked at ±0.25 around the reference values.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use pros_core::analysis::{
    block_collision_probability, collision_probability, pros_second_moment_ratio, rrv_vs_rss, rrv_vs_srs,
    rrv_vs_srs_from_densities,
};
use pros_core::distributions::{mixture_identity_residual, order_stat_pdf, subset_pdf, subset_pdfs};
use pros_core::em::{m_step, q_value};
use pros_core::kde::{estimate_with_ci, kde_pooled, kde_pros, kde_values, moment_estimator};
use pros_core::sampling::{draw_pros, draw_rss, draw_srs};
use pros_core::simulation::{
    recovery_matrices, replicate_rng, run_alpha_recovery, run_mise_study, run_symmetry_study, AlphaRecoveryProtocol,
    MiseProtocol, Parallelism, SymmetryProtocol,
};
use pros_core::stats::{mean, sample_variance};
use pros_core::{BandwidthSpec, Design, Distribution, EmConfig, GridSpec, Kernel, MisplacementMatrix};

struct Suite {
    passed: usize,
    failed: Vec<String>,
    known: Vec<String>,
}

impl Suite {
    fn new() -> Self {
        Suite {
            passed: 0,
            failed: Vec::new(),
            known: Vec::new(),
        }
    }

    fn check(&mut self, id: &str, pass: bool, detail: impl AsRef<str>) {
        println!("{} {id:<4} {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
        if pass {
            self.passed += 1;
        } else {
            self.failed.push(id.to_string());
        }
    }

    /// A criterion that cannot hold as stated; reported, but not fatal.
    fn check_known_gap(&mut self, id: &str, pass: bool, detail: impl AsRef<str>, why: &str) {
        if pass {
            self.check(id, true, detail);
        } else {
            println!("FAIL {id:<4} {} [known gap: {why}]", detail.as_ref());
            self.known.push(id.to_string());
        }
    }
}

fn dists() -> [Distribution; 6] {
    [
        Distribution::STANDARD_NORMAL,
        Distribution::Exponential { rate: 1.0 },
        Distribution::Gamma { shape: 3.0, scale: 1.0 },
        Distribution::Gumbel { loc: 0.0, scale: 1.0 },
        Distribution::Logistic { loc: 0.0, scale: 1.0 },
        Distribution::StudentT { df: 5.0 },
    ]
}

fn designs() -> [Design; 4] {
    [
        Design::new(2, 2, 1).unwrap(),
        Design::new(3, 2, 1).unwrap(),
        Design::new(4, 1, 1).unwrap(),
        Design::new(6, 3, 1).unwrap(),
    ]
}

/// Doubly stochastic matrices for `n` subsets, including a non-symmetric one.
fn alphas(n: usize) -> Vec<MisplacementMatrix> {
    let mut shifted = vec![vec![0.0; n]; n];
    for j in 0..n {
        shifted[j][j] += 0.6;
        shifted[j][(j + 1) % n] += 0.3;
        shifted[j][(j + 2) % n] += 0.1;
    }
    vec![
        MisplacementMatrix::identity(n),
        MisplacementMatrix::uniform(n),
        MisplacementMatrix::alpha0_family(n, 0.7).unwrap(),
        MisplacementMatrix::from_rows(shifted).unwrap(),
    ]
}

fn grid101(dist: &Distribution) -> Vec<f64> {
    (0..101)
        .map(|i| dist.quantile(0.001 + 0.998 * i as f64 / 100.0))
        .collect()
}

fn uniforms(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = replicate_rng(seed, 0, 7);
    draw_srs(&Distribution::Uniform01, count, &mut rng).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn full_scale() -> bool {
    std::env::var("PROS_ACCEPTANCE").map_or(true, |v| v != "smoke")
}

fn criterion1(s: &mut Suite) {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut count = 0;
    for dist in dists() {
        for design in designs() {
            for alpha in alphas(design.n_subsets) {
                for x in grid101(&dist) {
                    let r = mixture_identity_residual(&dist, &design, &alpha, x).unwrap();
                    worst = worst.max(r.abs() / dist.pdf(x).max(1.0));
                    count += 1;
                }
            }
        }
    }
    s.check(
        "1a",
        worst < 1e-12,
        format!("subset densities average to f: max scaled residual {worst:.2e} < 1e-12 over {count} cases"),
    );

    // Literal collision identity (1/n)Σ f_[j]² = n f² P(Y = Z).
    let mut worst_m1 = 0.0f64;
    let mut worst_all = 0.0f64;
    let mut worst_block = 0.0f64;
    for dist in dists() {
        for design in designs() {
            let id = MisplacementMatrix::identity(design.n_subsets);
            let n = design.n_subsets as f64;
            for x in grid101(&dist) {
                let f = dist.pdf(x);
                let lhs = subset_pdfs(&dist, &design, &id, x)
                    .unwrap()
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    / n;
                let p = dist.cdf(x);
                let literal = n * f * f * collision_probability(design.set_size(), p).unwrap();
                let block = n * f * f * block_collision_probability(&design, p).unwrap();
                let e = rel(lhs, literal);
                worst_all = worst_all.max(e);
                if design.subset_size == 1 {
                    worst_m1 = worst_m1.max(e);
                }
                worst_block = worst_block.max(rel(lhs, block));
            }
        }
    }
    s.check_known_gap(
        "1b",
        worst_all < 1e-12,
        format!("collision identity over all designs: max error {worst_all:.3e} (need < 1e-12)"),
        "holds only for m = 1",
    );
    s.check(
        "1b'",
        worst_m1 < 1e-12 && worst_block < 1e-12,
        format!(
            "collision identity for m = 1 designs: {worst_m1:.2e}; block-collision form for all designs: {worst_block:.2e} (< 1e-12)"
        ),
    );

    // Perfect subsetting reduces subset densities to block averages of
    // order-statistic densities; n = m = 1 PROS is SRS and m = 1 PROS is RSS.
    let mut worst = 0.0f64;
    for dist in dists() {
        for design in designs() {
            let id = MisplacementMatrix::identity(design.n_subsets);
            let s_size = design.set_size();
            for x in grid101(&dist) {
                for j in 0..design.n_subsets {
                    let avg = design
                        .subset_ranks(j)
                        .map(|u| order_stat_pdf(&dist, u, s_size, x).unwrap())
                        .sum::<f64>()
                        / design.subset_size as f64;
                    worst = worst.max(rel(subset_pdf(&dist, &design, &id, j, x).unwrap(), avg));
                }
            }
        }
    }
    let dist = Distribution::Gamma { shape: 3.0, scale: 1.0 };
    let srs_design = Design::new(1, 1, 40).unwrap();
    let as_pros = draw_pros(
        &dist,
        &srs_design,
        &MisplacementMatrix::identity(1),
        &mut replicate_rng(5, 0, 0),
    )
    .unwrap()
    .values();
    let as_srs = draw_srs(&dist, 40, &mut replicate_rng(5, 0, 0)).unwrap();
    let rss_alpha = MisplacementMatrix::alpha0_family(4, 0.7).unwrap();
    let pros_m1 = draw_pros(
        &dist,
        &Design::new(4, 1, 10).unwrap(),
        &rss_alpha,
        &mut replicate_rng(6, 0, 0),
    )
    .unwrap()
    .values();
    let rss = draw_rss(&dist, 4, 10, &rss_alpha, &mut replicate_rng(6, 0, 0))
        .unwrap()
        .values();
    s.check(
        "1c",
        worst < 1e-12 && as_pros == as_srs && pros_m1 == rss,
        format!(
            "perfect-subsetting reduction: density error {worst:.2e}; n=m=1 draws equal SRS: {}; m=1 draws equal RSS: {}",
            as_pros == as_srs,
            pros_m1 == rss
        ),
    );

    let mut worst_pool = 0.0f64;
    let mut worst_avg = 0.0f64;
    for (k, design) in designs().into_iter().enumerate() {
        let design = Design::new(design.n_subsets, design.subset_size, 7).unwrap();
        let alpha = MisplacementMatrix::alpha0_family(design.n_subsets, 0.8).unwrap();
        let sample = draw_pros(
            &Distribution::STANDARD_NORMAL,
            &design,
            &alpha,
            &mut replicate_rng(11, k, 2),
        )
        .unwrap();
        for kernel in [Kernel::Epanechnikov, Kernel::Gaussian] {
            let fit = kde_pros(&sample, kernel, BandwidthSpec::Fixed(0.4), &GridSpec::Default(201)).unwrap();
            let pooled = kde_pooled(&sample.values(), kernel, 0.4, &fit.estimate.grid).unwrap();
            for i in 0..fit.estimate.grid.len() {
                let f = fit.estimate.f_hat[i];
                let scale = f.abs().max(1e-300);
                worst_pool = worst_pool.max((f - pooled.f_hat[i]).abs() / scale);
                let avg = fit.per_subset.iter().map(|g| g[i]).sum::<f64>() / design.n_subsets as f64;
                if f > 1e-12 {
                    worst_avg = worst_avg.max((f - avg).abs() / scale);
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    s.check(
        "1d",
        worst_pool <= 1e-14 && worst_avg <= 1e-14 && elapsed < 1.0,
        format!(
            "pooling identity: pooled {worst_pool:.2e}, per-subset average {worst_avg:.2e} (≤ 1e-14); criterion 1 took {elapsed:.3}s (< 1s)"
        ),
    );
}

/// Grid maximum of `Q` over symmetric doubly stochastic 3×3 matrices, at
/// resolution 0.01 and then 0.001 around the best point. `Q` is concave, so
/// the local refinement finds the global grid optimum.
fn grid_search_3(w: &[Vec<f64>]) -> f64 {
    let q = |a: f64, b: f64, c: f64| -> f64 {
        let m = [[1.0 - a - b, a, b], [a, 1.0 - a - c, c], [b, c, 1.0 - b - c]];
        let mut total = 0.0;
        for j in 0..3 {
            for h in 0..3 {
                if w[j][h] > 0.0 {
                    if m[j][h] <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    total += w[j][h] * m[j][h].ln();
                }
            }
        }
        total
    };
    let feasible =
        |a: f64, b: f64, c: f64| a >= 0.0 && b >= 0.0 && c >= 0.0 && a + b <= 1.0 && a + c <= 1.0 && b + c <= 1.0;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    for i in 0..=100 {
        for k in 0..=100 {
            for l in 0..=100 {
                let (a, b, c) = (i as f64 / 100.0, k as f64 / 100.0, l as f64 / 100.0);
                if feasible(a, b, c) {
                    let v = q(a, b, c);
                    if v > best.0 {
                        best = (v, a, b, c);
                    }
                }
            }
        }
    }
    let (_, a0, b0, c0) = best;
    for i in -10..=10 {
        for k in -10..=10 {
            for l in -10..=10 {
                let (a, b, c) = (a0 + i as f64 / 1000.0, b0 + k as f64 / 1000.0, c0 + l as f64 / 1000.0);
                if feasible(a, b, c) {
                    best.0 = best.0.max(q(a, b, c));
                }
            }
        }
    }
    best.0
}

/// `Bin(trials, p)` probabilities by repeated convolution with a Bernoulli.
fn binomial_by_convolution(trials: usize, p: f64) -> Vec<f64> {
    let mut pmf = vec![1.0];
    for _ in 0..trials {
        let mut next = vec![0.0; pmf.len() + 1];
        for (k, v) in pmf.iter().enumerate() {
            next[k] += v * (1.0 - p);
            next[k + 1] += v * p;
        }
        pmf = next;
    }
    pmf
}

fn criterion2(s: &mut Suite) {
    let start = Instant::now();
    let u = uniforms(21, 400);
    let mut worst = 0.0f64;
    for c in u.chunks(4) {
        let w = vec![vec![c[0] * 10.0, c[1] * 10.0], vec![c[2] * 10.0, c[3] * 10.0]];
        let a = m_step(&w).unwrap();
        let total: f64 = c.iter().sum::<f64>() * 10.0;
        let closed = (w[0][0] + w[1][1]) / total;
        worst = worst
            .max((a.get(0, 0) - closed).abs())
            .max((a.get(0, 1) - (1.0 - closed)).abs());
    }
    s.check(
        "2a",
        worst <= 1e-10,
        format!("M-step vs n=2 closed form: max error {worst:.2e} (≤ 1e-10)"),
    );

    let u = uniforms(22, 45);
    let mut worst_gap = f64::NEG_INFINITY;
    for c in u.chunks(9) {
        let w: Vec<Vec<f64>> = (0..3)
            .map(|j| (0..3).map(|h| 5.0 * c[3 * j + h] + 0.05).collect())
            .collect();
        let a = m_step(&w).unwrap();
        worst_gap = worst_gap.max(grid_search_3(&w) - q_value(&w, &a));
    }
    s.check(
        "2b",
        worst_gap <= 1e-4,
        format!(
            "M-step vs n=3 grid search: worst objective gap {worst_gap:.2e} (≤ 1e-4, negative means the solver wins)"
        ),
    );

    let mut worst = 0.0f64;
    for dist in dists() {
        for design in designs() {
            for alpha in alphas(design.n_subsets) {
                for x in grid101(&dist).into_iter().step_by(5) {
                    let p = dist.cdf(x);
                    let a = rrv_vs_srs(&design, &alpha, p).unwrap();
                    let b = rrv_vs_srs_from_densities(&dist, &design, &alpha, x).unwrap();
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    s.check(
        "2c",
        worst <= 1e-12,
        format!("RRV binomial formula vs density ratio: max error {worst:.2e} (≤ 1e-12)"),
    );

    let mut worst = 0.0f64;
    for set_size in [1, 2, 5, 12, 30, 60] {
        for p in [0.01, 0.2, 0.5, 0.77, 0.99] {
            let pmf = binomial_by_convolution(set_size - 1, p);
            let mut brute = 0.0;
            for (y, py) in pmf.iter().enumerate() {
                for (z, pz) in pmf.iter().enumerate() {
                    if y == z {
                        brute += py * pz;
                    }
                }
            }
            worst = worst.max((collision_probability(set_size, p).unwrap() - brute).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    s.check(
        "2d",
        worst <= 1e-12 && elapsed < 10.0,
        format!("collision probability vs double sum: max error {worst:.2e} (≤ 1e-12); criterion 2 took {elapsed:.2}s (< 10s)"),
    );
}

fn criterion3(s: &mut Suite) {
    let start = Instant::now();
    let anchor = rrv_vs_srs(&Design::new(2, 3, 1).unwrap(), &MisplacementMatrix::identity(2), 0.5).unwrap();
    s.check(
        "3a",
        anchor == 0.0,
        format!("RRV vs SRS at n=2, m=3, α₀=1, p=0.5: {anchor:e} (exactly 0)"),
    );

    let mut worst = 0.0f64;
    for n in 1..=6 {
        for a0 in [1.0f64, 0.8, 0.5] {
            let alpha = MisplacementMatrix::alpha0_family(n, a0.max(1.0 / n as f64)).unwrap();
            let design = Design::new(n, 1, 1).unwrap();
            for k in 1..100 {
                worst = worst.max(rrv_vs_rss(&design, &alpha, &alpha, k as f64 / 100.0).unwrap().abs());
            }
        }
    }
    s.check(
        "3b",
        worst == 0.0,
        format!("m = 1 PROS vs RSS: max |RRV| {worst:e} (identically 0)"),
    );

    let mut worst = 0.0f64;
    for (n, m) in [(2, 3), (3, 2), (3, 3), (6, 3), (8, 3)] {
        let design = Design::new(n, m, 1).unwrap();
        for a0 in [1.0f64, 0.7, 0.5] {
            let alpha = MisplacementMatrix::alpha0_family(n, a0.max(1.0 / n as f64)).unwrap();
            for k in 1..50 {
                let p = k as f64 / 100.0;
                worst = worst.max(
                    (rrv_vs_srs(&design, &alpha, p).unwrap() - rrv_vs_srs(&design, &alpha, 1.0 - p).unwrap()).abs(),
                );
                worst = worst.max(
                    (rrv_vs_rss(&design, &alpha, &alpha, p).unwrap()
                        - rrv_vs_rss(&design, &alpha, &alpha, 1.0 - p).unwrap())
                    .abs(),
                );
                worst = worst.max(
                    (pros_second_moment_ratio(&design, &alpha, p).unwrap()
                        - pros_second_moment_ratio(&design, &alpha, 1.0 - p).unwrap())
                    .abs(),
                );
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    s.check(
        "3c",
        worst <= 1e-12 && elapsed < 1.0,
        format!("RRV curves symmetric about p=0.5: max asymmetry {worst:.2e} (≤ 1e-12); criterion 3 took {elapsed:.3}s (< 1s)"),
    );
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn criterion4(s: &mut Suite) {
    let (reps, full) = if full_scale() { (5000, true) } else { (1000, false) };
    let design = Design::new(6, 3, 4).unwrap();
    let normal = MiseProtocol::alpha0(Distribution::STANDARD_NORMAL, design, 1.0, reps, 20240501).unwrap();
    let gamma = MiseProtocol::alpha0(
        Distribution::Gamma { shape: 3.0, scale: 1.0 },
        design,
        1.0,
        reps,
        20240502,
    )
    .unwrap();
    let par = Parallelism::default();
    let rn = run_mise_study(&normal, par).unwrap();
    let rg = run_mise_study(&gamma, par).unwrap();
    let (rp_range, sp_range, gsp_range) = if full {
        ((1.25, 1.55), (2.0, 2.35), (1.5, 1.8))
    } else {
        (
            (1.399 - 0.25, 1.399 + 0.25),
            (2.151 - 0.25, 2.151 + 0.25),
            (1.650 - 0.25, 1.650 + 0.25),
        )
    };
    s.check(
        "4a",
        in_range(rn.rp.mean, rp_range.0, rp_range.1) && in_range(rn.sp.mean, sp_range.0, sp_range.1),
        format!(
            "MISE efficiency, Normal n=6 m=3 L=4 α₀=1, {reps} reps: RP {:.3}±{:.3} in [{:.3}, {:.3}], SP {:.3}±{:.3} in [{:.3}, {:.3}] (reference 1.399, 2.151)",
            rn.rp.mean, rn.rp.se, rp_range.0, rp_range.1, rn.sp.mean, rn.sp.se, sp_range.0, sp_range.1
        ),
    );
    s.check(
        "4b",
        in_range(rg.sp.mean, gsp_range.0, gsp_range.1),
        format!(
            "MISE efficiency, Gamma(3,1) n=6 m=3 L=4 α₀=1, {reps} reps: SP {:.3}±{:.3} in [{:.3}, {:.3}] (reference 1.650)",
            rg.sp.mean, rg.sp.se, gsp_range.0, gsp_range.1
        ),
    );
}

fn symmetry(
    dist: Distribution,
    n: usize,
    cycles: usize,
    reps: usize,
    seed: u64,
) -> pros_core::simulation::SymmetryReport {
    let protocol = SymmetryProtocol {
        dist,
        design: Design::new(n, 3, cycles).unwrap(),
        replicates: reps,
        kernel: Kernel::EpanechnikovUnit,
        bandwidth: BandwidthSpec::SilvermanReference,
        seed,
    };
    run_symmetry_study(&protocol, Parallelism::default()).unwrap()
}

fn criterion5(s: &mut Suite) {
    let reps = if full_scale() { 5000 } else { 1000 };
    let r = symmetry(Distribution::STANDARD_NORMAL, 6, 3, reps, 20240503);
    let (hl, known) = (r.efficiency[2], r.efficiency[4]);
    s.check(
        "5a",
        in_range(hl.mean, 1.11, 1.31) && in_range(known.mean, 1.26, 1.46),
        format!(
            "symmetric estimator, Normal n=6 m=3 L=3, {reps} reps: Hodges–Lehmann {:.3}±{:.3} in [1.11, 1.31], known centre {:.3}±{:.3} in [1.26, 1.46] (reference 1.212, 1.364)",
            hl.mean, hl.se, known.mean, known.se
        ),
    );
    let r = symmetry(Distribution::StudentT { df: 2.0 }, 8, 4, reps, 20240504);
    let m1 = r.efficiency[0];
    s.check(
        "5b",
        m1.mean < 1.0,
        format!(
            "symmetric estimator, t(2) n=8 m=3 L=4, {reps} reps: mean-centred {:.3}±{:.3} < 1 (reference 0.615)",
            m1.mean, m1.se
        ),
    );
}

fn criterion6(s: &mut Suite) {
    let start = Instant::now();
    let mats = recovery_matrices();
    let run = |dist: Distribution, alpha: &MisplacementMatrix, cycles: usize, seed: u64| {
        let protocol = AlphaRecoveryProtocol {
            dist,
            design: Design::new(3, 3, cycles).unwrap(),
            true_alpha: alpha.clone(),
            runs: 100,
            em: EmConfig::with_delta(1e-4),
            seed,
        };
        run_alpha_recovery(&protocol, Parallelism::default()).unwrap()
    };
    let a = run(Distribution::STANDARD_NORMAL, &mats[0], 10, 20240505);
    let b = run(Distribution::Exponential { rate: 1.0 }, &mats[2], 4, 20240506);
    let elapsed = start.elapsed().as_secs_f64();
    s.check(
        "6a",
        in_range(a.mean[0][0], 0.945, 1.0),
        format!(
            "EM recovery, Normal n=m=3 L=10 α=I, 100 runs ({} converged): mean α̂₁₁ {:.4} (sd {:.4}) in [0.945, 1.0] (reference 0.9775)",
            a.converged_runs, a.mean[0][0], a.sd[0][0]
        ),
    );
    s.check(
        "6b",
        in_range(b.mean[0][0], 0.70, 0.80) && elapsed < 120.0,
        format!(
            "EM recovery, Exponential n=m=3 L=4 α₃, 100 runs ({} converged): mean α̂₁₁ {:.4} (sd {:.4}) in [0.70, 0.80] (reference 0.7486); took {elapsed:.1}s (< 120s)",
            b.converged_runs, b.mean[0][0], b.sd[0][0]
        ),
    );
}

/// Sample variance with the standard error of that variance estimate.
fn variance_with_se(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    let s2 = sample_variance(v);
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / v.len() as f64;
    (s2, ((m4 - s2 * s2) / v.len() as f64).max(0.0).sqrt())
}

fn criterion7(s: &mut Suite) {
    let reps = 2000;
    let dist = Distribution::STANDARD_NORMAL;
    let design = Design::new(6, 3, 4).unwrap();
    let id = MisplacementMatrix::identity(6);
    let n_total = design.sample_size() as f64;
    let h = (4.0f64 / 3.0).powf(0.2) * n_total.powf(-0.2);
    let x0 = [dist.quantile(0.5)];
    let mut pros = Vec::with_capacity(reps);
    let mut srs = Vec::with_capacity(reps);
    for r in 0..reps {
        let sample = draw_pros(&dist, &design, &id, &mut replicate_rng(31, r, 2)).unwrap();
        pros.push(kde_values(&sample.values(), Kernel::Epanechnikov, h, &x0).unwrap()[0]);
        let plain = draw_srs(&dist, design.sample_size(), &mut replicate_rng(31, r, 0)).unwrap();
        srs.push(kde_values(&plain, Kernel::Epanechnikov, h, &x0).unwrap()[0]);
    }
    let (vp, sep) = variance_with_se(&pros);
    let (vs, ses) = variance_with_se(&srs);
    let se = (sep * sep + ses * ses).sqrt();
    s.check(
        "7a",
        vp <= vs + 3.0 * se,
        format!("pointwise variance at the median, {reps} reps: PROS {vp:.3e} ≤ SRS {vs:.3e} + 3·{se:.1e}"),
    );

    let r = symmetry(dist, 6, 3, reps, 32);
    let known = r.mise_reflected[4];
    let se = (known.se * known.se + r.mise_pros.se * r.mise_pros.se).sqrt();
    s.check(
        "7b",
        known.mean <= r.mise_pros.mean + 3.0 * se,
        format!(
            "reflected estimate with known centre, {reps} reps: MISE {:.4e} ≤ PROS {:.4e} + 3·{se:.1e}",
            known.mean, r.mise_pros.mean
        ),
    );

    let uniform_design = Design::new(2, 2, 50).unwrap();
    let moments: Vec<f64> = (0..reps)
        .map(|r| {
            let sample = draw_pros(
                &Distribution::Uniform01,
                &uniform_design,
                &MisplacementMatrix::identity(2),
                &mut replicate_rng(33, r, 2),
            )
            .unwrap();
            moment_estimator(&sample, |x| x * x)
        })
        .collect();
    let m = mean(&moments);
    let se = (sample_variance(&moments) / reps as f64).sqrt();
    s.check(
        "7c",
        (m - 1.0 / 3.0).abs() <= 3.0 * se,
        format!("moment estimator of E[X²] for Uniform(0,1), {reps} reps: {m:.5} within 3·{se:.1e} of 1/3"),
    );
}

fn criterion8(s: &mut Suite) {
    let reps = 2000;
    let dist = Distribution::STANDARD_NORMAL;
    let design = Design::new(3, 2, 50).unwrap();
    let id = MisplacementMatrix::identity(3);
    let x0 = dist.quantile(0.5);
    let truth = dist.pdf(x0);
    let mut covered = 0;
    for r in 0..reps {
        let sample = draw_pros(&dist, &design, &id, &mut replicate_rng(41, r, 2)).unwrap();
        let est = estimate_with_ci(
            &sample,
            Kernel::Epanechnikov,
            BandwidthSpec::SilvermanReference,
            &GridSpec::Points(vec![x0]),
            Some(0.05),
        )
        .unwrap();
        if est.ci_lo.unwrap()[0] <= truth && truth <= est.ci_hi.unwrap()[0] {
            covered += 1;
        }
    }
    let coverage = covered as f64 / reps as f64;
    s.check(
        "8",
        in_range(coverage, 0.90, 0.98),
        format!("95% pointwise interval at the normal median, N=150 perfect PROS, {reps} reps: coverage {coverage:.4} in [0.90, 0.98]"),
    );
}

fn run_cli(args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_pros"))
        .args(args)
        .output()
        .expect("run pros");
    (out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_default()
}

fn criterion9(s: &mut Suite) {
    let mise = MiseProtocol::alpha0(
        Distribution::Gumbel { loc: 0.0, scale: 1.0 },
        Design::new(6, 3, 4).unwrap(),
        0.7,
        300,
        9,
    )
    .unwrap();
    let sym = SymmetryProtocol {
        dist: Distribution::Laplace { loc: 0.0, scale: 1.0 },
        design: Design::new(6, 3, 3).unwrap(),
        replicates: 300,
        kernel: Kernel::EpanechnikovUnit,
        bandwidth: BandwidthSpec::SilvermanReference,
        seed: 9,
    };
    let rec = AlphaRecoveryProtocol {
        dist: Distribution::STANDARD_NORMAL,
        design: Design::new(3, 3, 4).unwrap(),
        true_alpha: recovery_matrices()[1].clone(),
        runs: 40,
        em: EmConfig::with_delta(1e-4),
        seed: 9,
    };
    let snapshot = |threads: usize| {
        let par = Parallelism::threads(threads);
        let mut a = run_mise_study(&mise, par).unwrap();
        a.runtime_secs = None;
        let mut b = run_symmetry_study(&sym, par).unwrap();
        b.runtime_secs = None;
        let mut c = run_alpha_recovery(&rec, par).unwrap();
        c.runtime_secs = None;
        serde_json::to_string(&(a, b, c)).unwrap()
    };
    let one = snapshot(1);
    let lib_ok = one == snapshot(1) && one == snapshot(4) && one == snapshot(7);
    s.check(
        "9a",
        lib_ok,
        format!("study reports identical across reruns and 1/4/7 workers: {lib_ok}"),
    );

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |name: &str| d.join(name).to_string_lossy().into_owned();
    let sample_csv = p("pros_sample.csv");
    let (ok, err) = run_cli(&[
        "sample",
        "--dist",
        "normal",
        "--n",
        "3",
        "--m",
        "3",
        "--L",
        "6",
        "--alpha0",
        "0.8",
        "--seed",
        "3",
        "--output",
        &sample_csv,
    ]);
    assert!(ok, "sample failed: {err}");
    let pop_csv = p("pop.csv");
    let (ok, err) = run_cli(&[
        "synthesize-population",
        "--size",
        "400",
        "--seed",
        "3",
        "--output",
        &pop_csv,
    ]);
    assert!(ok, "synthesize-population failed: {err}");

    type Invocation = (&'static str, Vec<String>);
    let commands: Vec<Invocation> = vec![
        (
            "sample",
            vec![
                "sample",
                "--dist",
                "gamma:3,1",
                "--n",
                "3",
                "--m",
                "2",
                "--L",
                "4",
                "--alpha",
                "identity",
                "--seed",
                "7",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "synthesize-population",
            vec!["synthesize-population", "--size", "300", "--seed", "4"]
                .into_iter()
                .map(String::from)
                .collect(),
        ),
        (
            "rrv",
            vec!["rrv", "--n", "4", "--m", "3", "--alpha0", "0.7", "--baseline", "rss"]
                .into_iter()
                .map(String::from)
                .collect(),
        ),
        (
            "em",
            vec![
                "em".into(),
                "--input".into(),
                sample_csv.clone(),
                "--n".into(),
                "3".into(),
                "--m".into(),
                "3".into(),
            ],
        ),
        (
            "estimate",
            vec![
                "estimate".into(),
                "--population".into(),
                pop_csv.clone(),
                "--n".into(),
                "3".into(),
                "--m".into(),
                "2".into(),
                "--L".into(),
                "5".into(),
                "--M".into(),
                "4".into(),
                "--grid-points".into(),
                "64".into(),
                "--seed".into(),
                "5".into(),
            ],
        ),
        (
            "simulate mise",
            vec![
                "simulate",
                "--study",
                "mise",
                "--dist",
                "logistic",
                "--n",
                "4",
                "--L",
                "3",
                "--alpha0",
                "0.5",
                "--replicates",
                "60",
                "--seed",
                "5",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "simulate symmetry",
            vec![
                "simulate",
                "--study",
                "symmetry",
                "--dist",
                "t:3",
                "--n",
                "4",
                "--L",
                "3",
                "--replicates",
                "60",
                "--seed",
                "5",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "simulate recovery",
            vec![
                "simulate",
                "--study",
                "recovery",
                "--n",
                "3",
                "--m",
                "3",
                "--L",
                "4",
                "--matrix",
                "3",
                "--replicates",
                "12",
                "--seed",
                "5",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
    ];
    let mut all_ok = true;
    let mut bad = Vec::new();
    for (k, (name, args)) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for (run, threads) in [(0, "1"), (1, "1"), (2, "5")] {
            let out = p(&format!("out_{k}_{run}"));
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            full.extend(["--output", &out]);
            if name.starts_with("simulate") {
                full.extend(["--threads", threads]);
            }
            let (ok, err) = run_cli(&full);
            if !ok {
                bad.push(format!("{name}: {err}"));
            }
            let out = Path::new(&out);
            let manifest = pros_cli_manifest(out);
            outputs.push((read(out), read(&manifest)));
        }
        // Manifests name their own output path, so compare them modulo that.
        let same = outputs.iter().all(|(o, _)| *o == outputs[0].0 && !o.is_empty())
            && outputs.iter().enumerate().all(|(i, (_, m))| {
                strip_paths(m, &p(&format!("out_{k}_{i}"))) == strip_paths(&outputs[0].1, &p(&format!("out_{k}_0")))
            });
        if !same {
            bad.push(format!("{name}: outputs differ"));
        }
        all_ok &= same;
    }
    s.check(
        "9b",
        all_ok && bad.is_empty(),
        format!(
            "CLI outputs byte-identical across reruns and worker counts for {} commands{}",
            commands.len(),
            if bad.is_empty() {
                String::new()
            } else {
                format!(": {bad:?}")
            }
        ),
    );
}

fn pros_cli_manifest(output: &Path) -> std::path::PathBuf {
    let mut os = output.as_os_str().to_owned();
    os.push(".manifest.json");
    os.into()
}

fn strip_paths(bytes: &[u8], path: &str) -> String {
    String::from_utf8_lossy(bytes).replace(path, "<output>")
}

fn main() {
    let mut suite = Suite::new();
    let scale = if full_scale() { "full" } else { "smoke" };
    println!("acceptance suite ({scale} Monte Carlo scale)");
    criterion1(&mut suite);
    criterion2(&mut suite);
    criterion3(&mut suite);
    criterion4(&mut suite);
    criterion5(&mut suite);
    criterion6(&mut suite);
    criterion7(&mut suite);
    criterion8(&mut suite);
    criterion9(&mut suite);
    println!(
        "summary: {} passed, {} failed, {} known gaps{}",
        suite.passed,
        suite.failed.len(),
        suite.known.len(),
        if suite.known.is_empty() {
            String::new()
        } else {
            format!(" ({})", suite.known.join(", "))
        }
    );
    if !suite.failed.is_empty() {
        eprintln!("failed criteria: {}", suite.failed.join(", "));
        std::process::exit(1);
    }
}
