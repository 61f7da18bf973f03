//! Monte Carlo studies: MISE comparisons of SRS, RSS and PROS estimates,
//! efficiencies of reflection-averaged estimates, and recovery of the
//! misplacement matrix by EM.
//!
//! Replicate `r` draws design `k` from its own ChaCha8 stream
//! (`seed`, stream `8r + k`), so results do not depend on how replicates are
//! scheduled. Replicates run on a rayon pool, are collected in index order
//! and reduced sequentially.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{Design, Distribution, MisplacementMatrix};
use crate::em::{estimate_alpha, EmConfig};
use crate::error::{Error, Result};
use crate::kde::{kde_values, BandwidthSpec, Kernel};
use crate::quadrature::{linspace, trapezoid};
use crate::sampling::{draw_pros, draw_rss, draw_srs, ProsSample};
use crate::stats::{self, ratio_with_se, MeanSe};
use crate::symmetric::{estimate_location, LocationEstimator};

/// Grid points per bandwidth in the core of an ISE grid.
pub const ISE_POINTS_PER_BANDWIDTH: f64 = 16.0;
pub const ISE_MIN_POINTS: usize = 1024;
pub const ISE_MAX_POINTS: usize = 65_536;
const WINDOW_POINTS: usize = 33;

/// Fraction of replicates allowed to fail before a study is rejected.
pub const MAX_ABORTED_FRACTION: f64 = 0.01;

const STREAM_SRS: u64 = 0;
const STREAM_RSS: u64 = 1;
const STREAM_PROS: u64 = 2;

pub type ReplicateRng = ChaCha8Rng;

/// Random stream for design `stream` of replicate `replicate`.
pub fn replicate_rng(seed: u64, replicate: usize, stream: u64) -> ReplicateRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64 * 8 + stream);
    rng
}

/// Worker count for replicate execution; `None` uses rayon's default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parallelism {
    pub threads: Option<usize>,
}

impl Parallelism {
    pub fn threads(threads: usize) -> Self {
        Parallelism { threads: Some(threads) }
    }

    fn run<T: Send, F: Fn(usize) -> T + Sync + Send>(&self, count: usize, f: F) -> Result<Vec<T>> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = self.threads {
            builder = builder.num_threads(t.max(1));
        }
        let pool = builder
            .build()
            .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(|| (0..count).into_par_iter().map(f).collect()))
    }
}

/// Evaluation grid for an ISE. The core spans the population's
/// 0.01%–99.99% quantiles padded by the kernel support, with at least
/// [`ISE_POINTS_PER_BANDWIDTH`] points per bandwidth. Each centre whose
/// kernel window leaves the core gets its own local window, so far outliers
/// are resolved without a huge uniform grid.
pub fn ise_grid(dist: &Distribution, kernel: Kernel, h: f64, centres: &[f64]) -> Vec<f64> {
    let pad = kernel.support_radius() * h;
    let core_lo = dist.quantile(1e-4) - pad;
    let core_hi = dist.quantile(1.0 - 1e-4) + pad;
    let points = ((ISE_POINTS_PER_BANDWIDTH * (core_hi - core_lo) / h).ceil() as usize + 1)
        .clamp(ISE_MIN_POINTS, ISE_MAX_POINTS);
    let mut grid = linspace(core_lo, core_hi, points);
    for &c in centres {
        if c - pad < core_lo || c + pad > core_hi {
            grid.extend(linspace(c - pad, c + pad, WINDOW_POINTS));
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| *a <= *b);
    grid
}

/// `∫ (f̂ − f)²` by the trapezoid rule on `grid`.
pub fn ise_on_grid(grid: &[f64], f_hat: &[f64], dist: &Distribution) -> f64 {
    let sq: Vec<f64> = grid
        .iter()
        .zip(f_hat)
        .map(|(&x, &fh)| {
            let d = fh - dist.pdf(x);
            d * d
        })
        .collect();
    trapezoid(grid, &sq)
}

/// ISE of a fitted estimate. The grid must cover the population's
/// 0.1%–99.9% quantile range and the observed data range.
pub fn ise(estimate: &crate::kde::DensityEstimate, dist: &Distribution) -> Result<f64> {
    let need_lo = dist.quantile(0.001).min(estimate.data_range.0);
    let need_hi = dist.quantile(0.999).max(estimate.data_range.1);
    let have_lo = estimate.grid[0];
    let have_hi = *estimate.grid.last().expect("nonempty grid");
    if have_lo > need_lo || have_hi < need_hi {
        return Err(Error::Coverage {
            need_lo,
            need_hi,
            have_lo,
            have_hi,
        });
    }
    Ok(ise_on_grid(&estimate.grid, &estimate.f_hat, dist))
}

/// ISE of the KDE of `values` with bandwidth `h` on its own ISE grid.
pub fn ise_of_sample(values: &[f64], dist: &Distribution, kernel: Kernel, h: f64) -> Result<f64> {
    let grid = ise_grid(dist, kernel, h, values);
    let f_hat = kde_values(values, kernel, h, &grid)?;
    Ok(ise_on_grid(&grid, &f_hat, dist))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiseProtocol {
    pub dist: Distribution,
    pub design: Design,
    pub alpha: MisplacementMatrix,
    /// Ranking-error matrix of the RSS comparator (set size `n`).
    pub rss_error: MisplacementMatrix,
    pub replicates: usize,
    pub kernel: Kernel,
    pub bandwidth: BandwidthSpec,
    pub seed: u64,
}

impl MiseProtocol {
    /// Misplacement and ranking errors both from the `alpha0` family.
    pub fn alpha0(dist: Distribution, design: Design, alpha0: f64, replicates: usize, seed: u64) -> Result<Self> {
        let alpha = MisplacementMatrix::alpha0_family(design.n_subsets, alpha0)?;
        Ok(MiseProtocol {
            dist,
            design,
            rss_error: alpha.clone(),
            alpha,
            replicates,
            kernel: Kernel::EpanechnikovUnit,
            bandwidth: BandwidthSpec::SilvermanReference,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub protocol: MiseProtocol,
    pub mise_srs: MeanSe,
    pub mise_rss: MeanSe,
    pub mise_pros: MeanSe,
    /// `MISE(RSS) / MISE(PROS)`.
    pub rp: MeanSe,
    /// `MISE(SRS) / MISE(PROS)`.
    pub sp: MeanSe,
    pub completed: usize,
    pub aborted: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_secs: Option<f64>,
}

fn sample_ise(sample: &ProsSample, p: &MiseProtocol) -> Result<f64> {
    let values = sample.values();
    let h = p.bandwidth.resolve(&values)?;
    ise_of_sample(&values, &p.dist, p.kernel, h)
}

fn mise_replicate(p: &MiseProtocol, r: usize) -> Result<[f64; 3]> {
    let d = &p.design;
    let mut rng = replicate_rng(p.seed, r, STREAM_SRS);
    let srs = ProsSample::from_srs(&draw_srs(&p.dist, d.sample_size(), &mut rng)?)?;
    let mut rng = replicate_rng(p.seed, r, STREAM_RSS);
    let rss = draw_rss(&p.dist, d.n_subsets, d.cycles, &p.rss_error, &mut rng)?;
    let mut rng = replicate_rng(p.seed, r, STREAM_PROS);
    let pros = draw_pros(&p.dist, d, &p.alpha, &mut rng)?;
    Ok([sample_ise(&srs, p)?, sample_ise(&rss, p)?, sample_ise(&pros, p)?])
}

/// Keeps successful replicates, failing if more than 1% aborted.
fn collect_ok<T>(results: Vec<Result<T>>) -> Result<(Vec<T>, usize)> {
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut aborted = 0;
    let mut first = None;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                aborted += 1;
                first.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if aborted as f64 > MAX_ABORTED_FRACTION * total as f64 || ok.is_empty() {
        return Err(Error::TooManyAborted {
            aborted,
            total,
            first: first.unwrap_or_default(),
        });
    }
    Ok((ok, aborted))
}

pub fn run_mise_study(protocol: &MiseProtocol, par: Parallelism) -> Result<SimulationReport> {
    if protocol.replicates == 0 {
        return Err(Error::InvalidParameter("replicates must be positive".into()));
    }
    protocol.dist.validate()?;
    if protocol.alpha.dim() != protocol.design.n_subsets || protocol.rss_error.dim() != protocol.design.n_subsets {
        return Err(Error::DesignMismatch("matrix dimensions must equal n".into()));
    }
    let start = Instant::now();
    let results = par.run(protocol.replicates, |r| mise_replicate(protocol, r))?;
    let (rows, aborted) = collect_ok(results)?;
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
    let (srs, rss, pros) = (col(0), col(1), col(2));
    Ok(SimulationReport {
        protocol: protocol.clone(),
        mise_srs: MeanSe::from_values(&srs),
        mise_rss: MeanSe::from_values(&rss),
        mise_pros: MeanSe::from_values(&pros),
        rp: ratio_with_se(&rss, &pros, false),
        sp: ratio_with_se(&srs, &pros, false),
        completed: rows.len(),
        aborted,
        runtime_secs: Some(start.elapsed().as_secs_f64()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryProtocol {
    pub dist: Distribution,
    pub design: Design,
    pub replicates: usize,
    pub kernel: Kernel,
    pub bandwidth: BandwidthSpec,
    pub seed: u64,
}

/// Location estimators compared in a symmetry study, in report order.
pub fn symmetry_estimators(center: f64) -> [LocationEstimator; 5] {
    [
        LocationEstimator::Mean,
        LocationEstimator::Median,
        LocationEstimator::HODGES_LEHMANN,
        LocationEstimator::CycleMedianMean,
        LocationEstimator::Known { mu: center },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub protocol: SymmetryProtocol,
    pub mise_pros: MeanSe,
    pub estimators: Vec<LocationEstimator>,
    pub mise_reflected: Vec<MeanSe>,
    /// `MISE(f̂_PROS) / MISE(f̂*)` per estimator, with paired standard errors.
    pub efficiency: Vec<MeanSe>,
    pub completed: usize,
    pub aborted: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_secs: Option<f64>,
}

fn symmetry_replicate(p: &SymmetryProtocol, estimators: &[LocationEstimator], r: usize) -> Result<Vec<f64>> {
    let mut rng = replicate_rng(p.seed, r, STREAM_PROS);
    let sample = draw_pros(
        &p.dist,
        &p.design,
        &MisplacementMatrix::identity(p.design.n_subsets),
        &mut rng,
    )?;
    let values = sample.values();
    let h = p.bandwidth.resolve(&values)?;
    let mus = estimators
        .iter()
        .map(|&e| estimate_location(&sample, e))
        .collect::<Result<Vec<_>>>()?;
    // One grid resolving the data and every reflection of it.
    let mut centres = values.clone();
    for &mu in &mus {
        centres.extend(values.iter().map(|v| 2.0 * mu - v));
    }
    let grid = ise_grid(&p.dist, p.kernel, h, &centres);
    let direct = kde_values(&values, p.kernel, h, &grid)?;
    let mut out = Vec::with_capacity(mus.len() + 1);
    out.push(ise_on_grid(&grid, &direct, &p.dist));
    for &mu in &mus {
        let mirrored: Vec<f64> = grid.iter().map(|&x| 2.0 * mu - x).collect();
        let reflected = kde_values(&values, p.kernel, h, &mirrored)?;
        let star: Vec<f64> = direct.iter().zip(&reflected).map(|(a, b)| 0.5 * (a + b)).collect();
        out.push(ise_on_grid(&grid, &star, &p.dist));
    }
    Ok(out)
}

/// Efficiency of reflection-averaged estimates over the plain PROS estimate
/// for a perfect design and a symmetric population.
pub fn run_symmetry_study(protocol: &SymmetryProtocol, par: Parallelism) -> Result<SymmetryReport> {
    if protocol.replicates == 0 {
        return Err(Error::InvalidParameter("replicates must be positive".into()));
    }
    let center = protocol
        .dist
        .center()
        .ok_or_else(|| Error::InvalidParameter(format!("{} is not a symmetric family", protocol.dist)))?;
    let estimators = symmetry_estimators(center);
    let start = Instant::now();
    let results = par.run(protocol.replicates, |r| symmetry_replicate(protocol, &estimators, r))?;
    let (rows, aborted) = collect_ok(results)?;
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
    let base = col(0);
    let mut mise_reflected = Vec::new();
    let mut efficiency = Vec::new();
    for k in 1..=estimators.len() {
        let c = col(k);
        mise_reflected.push(MeanSe::from_values(&c));
        efficiency.push(ratio_with_se(&base, &c, true));
    }
    Ok(SymmetryReport {
        protocol: protocol.clone(),
        mise_pros: MeanSe::from_values(&base),
        estimators: estimators.to_vec(),
        mise_reflected,
        efficiency,
        completed: rows.len(),
        aborted,
        runtime_secs: Some(start.elapsed().as_secs_f64()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecoveryProtocol {
    pub dist: Distribution,
    pub design: Design,
    pub true_alpha: MisplacementMatrix,
    pub runs: usize,
    pub em: EmConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecoveryReport {
    pub protocol: AlphaRecoveryProtocol,
    /// Entrywise mean and standard deviation over converged runs.
    pub mean: Vec<Vec<f64>>,
    pub sd: Vec<Vec<f64>>,
    pub converged_runs: usize,
    pub nonconverged_runs: usize,
    pub mean_iterations: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_secs: Option<f64>,
}

pub fn run_alpha_recovery(protocol: &AlphaRecoveryProtocol, par: Parallelism) -> Result<AlphaRecoveryReport> {
    if protocol.runs == 0 {
        return Err(Error::InvalidParameter("runs must be positive".into()));
    }
    let n = protocol.design.n_subsets;
    if protocol.true_alpha.dim() != n {
        return Err(Error::DesignMismatch("true matrix dimension must equal n".into()));
    }
    let start = Instant::now();
    let results = par.run(protocol.runs, |r| {
        let mut rng = replicate_rng(protocol.seed, r, STREAM_PROS);
        let sample = draw_pros(&protocol.dist, &protocol.design, &protocol.true_alpha, &mut rng)?;
        estimate_alpha(&sample, &protocol.em)
    })?;
    let (traces, _) = collect_ok(results)?;
    let converged: Vec<_> = traces.iter().filter(|t| t.converged).collect();
    let mut mean = vec![vec![0.0; n]; n];
    let mut sd = vec![vec![0.0; n]; n];
    if !converged.is_empty() {
        for j in 0..n {
            for h in 0..n {
                let v: Vec<f64> = converged.iter().map(|t| t.final_alpha.get(j, h)).collect();
                mean[j][h] = stats::mean(&v);
                sd[j][h] = stats::sample_sd(&v);
            }
        }
    }
    let mean_iterations = stats::mean(&traces.iter().map(|t| t.iterations as f64).collect::<Vec<_>>());
    Ok(AlphaRecoveryReport {
        protocol: protocol.clone(),
        mean,
        sd,
        converged_runs: converged.len(),
        nonconverged_runs: traces.len() - converged.len(),
        mean_iterations,
        runtime_secs: Some(start.elapsed().as_secs_f64()),
    })
}

/// The three misplacement matrices of the recovery study (`n = 3`).
pub fn recovery_matrices() -> [MisplacementMatrix; 3] {
    let m =
        |rows: [[f64; 3]; 3]| MisplacementMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).expect("valid");
    [
        MisplacementMatrix::identity(3),
        m([[0.900, 0.075, 0.025], [0.075, 0.850, 0.075], [0.025, 0.075, 0.900]]),
        m([[0.75, 0.15, 0.10], [0.15, 0.70, 0.15], [0.10, 0.15, 0.75]]),
    ]
}

/// Full MISE comparison grid: Normal, Gamma(3, 1) and Gumbel populations,
/// `m = 3`, `(n, L) ∈ {(6,4), (6,8), (8,3), (8,6)}`, `α₀ ∈ {0, .3, .5, .7, 1}`.
pub fn mise_table_protocols(replicates: usize, seed: u64) -> Vec<MiseProtocol> {
    let dists = [
        Distribution::STANDARD_NORMAL,
        Distribution::Gamma { shape: 3.0, scale: 1.0 },
        Distribution::Gumbel { loc: 0.0, scale: 1.0 },
    ];
    let mut out = Vec::new();
    for dist in dists {
        for (n, l) in [(6, 4), (6, 8), (8, 3), (8, 6)] {
            for a0 in [0.0, 0.3, 0.5, 0.7, 1.0] {
                let design = Design::new(n, 3, l).expect("valid design");
                out.push(MiseProtocol::alpha0(dist, design, a0, replicates, seed).expect("valid alpha0"));
            }
        }
    }
    out
}

/// Full symmetry grid: Normal, Logistic, t(2) and Laplace populations,
/// `m = 3`, `n ∈ {6, 8}`, `L ∈ {3, 4}`.
pub fn symmetry_table_protocols(replicates: usize, seed: u64) -> Vec<SymmetryProtocol> {
    let dists = [
        Distribution::STANDARD_NORMAL,
        Distribution::Logistic { loc: 0.0, scale: 1.0 },
        Distribution::StudentT { df: 2.0 },
        Distribution::Laplace { loc: 0.0, scale: 1.0 },
    ];
    let mut out = Vec::new();
    for dist in dists {
        for n in [6, 8] {
            for l in [3, 4] {
                out.push(SymmetryProtocol {
                    dist,
                    design: Design::new(n, 3, l).expect("valid design"),
                    replicates,
                    kernel: Kernel::EpanechnikovUnit,
                    bandwidth: BandwidthSpec::SilvermanReference,
                    seed,
                });
            }
        }
    }
    out
}

/// Full recovery grid: Normal and Exponential populations, `n = m = 3`,
/// `L ∈ {4, 10}`, the three matrices of [`recovery_matrices`].
pub fn recovery_table_protocols(runs: usize, delta: f64, seed: u64) -> Vec<AlphaRecoveryProtocol> {
    let dists = [Distribution::STANDARD_NORMAL, Distribution::Exponential { rate: 1.0 }];
    let mut out = Vec::new();
    for dist in dists {
        for alpha in recovery_matrices() {
            for l in [4, 10] {
                out.push(AlphaRecoveryProtocol {
                    dist,
                    design: Design::new(3, 3, l).expect("valid design"),
                    true_alpha: alpha.clone(),
                    runs,
                    em: EmConfig::with_delta(delta),
                    seed,
                });
            }
        }
    }
    out
}
