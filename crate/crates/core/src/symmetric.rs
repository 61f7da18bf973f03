//! Reflection-averaged density estimation for populations symmetric about an
//! unknown (or known) centre, and the location estimators used to plug in
//! that centre.

use serde::{Deserialize, Serialize};

use crate::distributions::{MisplacementMatrix, STOCHASTIC_TOL};
use crate::error::{Error, Result};
use crate::kde::{kde_pooled, kde_values, BandwidthSpec, DensityEstimate, GridSpec, Kernel, ReflectionInfo};
use crate::sampling::ProsSample;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LocationEstimator {
    /// Grand mean of all observations.
    Mean,
    /// Median of all observations.
    Median,
    /// Median of the pairwise averages `(X + X')/2` over all ordered pairs;
    /// `self_pairs` keeps the `N` pairs of an observation with itself.
    HodgesLehmann {
        self_pairs: bool,
    },
    /// Mean over cycles of the within-cycle median.
    CycleMedianMean,
    Known {
        mu: f64,
    },
}

impl LocationEstimator {
    pub const HODGES_LEHMANN: LocationEstimator = LocationEstimator::HodgesLehmann { self_pairs: true };
}

impl std::str::FromStr for LocationEstimator {
    type Err = Error;

    /// Accepts `mean`, `median`, `hl`, `hl-distinct`, `cycle-median`, or a
    /// number for a known centre.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" | "mu1" => Ok(LocationEstimator::Mean),
            "median" | "mu2" => Ok(LocationEstimator::Median),
            "hl" | "hodges-lehmann" | "hodges_lehmann" | "mu3" => Ok(LocationEstimator::HODGES_LEHMANN),
            "hl-distinct" => Ok(LocationEstimator::HodgesLehmann { self_pairs: false }),
            "cycle-median" | "cycle_median_mean" | "mu4" => Ok(LocationEstimator::CycleMedianMean),
            other => match other.parse::<f64>() {
                Ok(mu) if mu.is_finite() => Ok(LocationEstimator::Known { mu }),
                _ => Err(Error::InvalidParameter(format!("unknown location estimator {s:?}"))),
            },
        }
    }
}

pub fn estimate_location(sample: &ProsSample, kind: LocationEstimator) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Structure("sample is empty".into()));
    }
    let values = sample.values();
    match kind {
        LocationEstimator::Mean => Ok(stats::mean(&values)),
        LocationEstimator::Median => Ok(stats::median(&values)),
        LocationEstimator::HodgesLehmann { self_pairs } => Ok(hodges_lehmann(&values, self_pairs)),
        LocationEstimator::CycleMedianMean => {
            let design = sample.design();
            let mut buf = Vec::with_capacity(design.n_subsets);
            let mut total = 0.0;
            for i in 0..design.cycles {
                let cycle = sample.cycle_values(i);
                if cycle.len() != design.n_subsets || cycle.iter().any(|o| o.cycle != i) {
                    return Err(Error::Structure(format!("cycle {} is incomplete", i + 1)));
                }
                buf.clear();
                buf.extend(cycle.iter().map(|o| o.value));
                total += stats::median_in_place(&mut buf);
            }
            Ok(total / design.cycles as f64)
        }
        LocationEstimator::Known { mu } => {
            if mu.is_finite() {
                Ok(mu)
            } else {
                Err(Error::InvalidParameter(format!("known centre {mu} is not finite")))
            }
        }
    }
}

/// Median of `(x_i + x_l)/2` over all ordered pairs `(i, l)`, with or
/// without `i = l`.
///
/// Runs in `O(N log N)` per bisection step by counting pairs below a
/// threshold with two pointers, so large samples never materialise the `N²`
/// averages.
pub fn hodges_lehmann(values: &[f64], self_pairs: bool) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let sorted = stats::sorted_copy(values);
    let total = if self_pairs { (n * n) as u64 } else { (n * n - n) as u64 };
    if total % 2 == 1 {
        kth_pair_average(&sorted, self_pairs, total / 2 + 1)
    } else {
        let a = kth_pair_average(&sorted, self_pairs, total / 2);
        let b = kth_pair_average(&sorted, self_pairs, total / 2 + 1);
        0.5 * (a + b)
    }
}

#[inline]
fn pair_avg(a: f64, b: f64) -> f64 {
    0.5 * (a + b)
}

/// Number of ordered pairs whose average is `≤ t`.
fn count_le(sorted: &[f64], self_pairs: bool, t: f64) -> u64 {
    let n = sorted.len();
    let mut count = 0u64;
    // For increasing i the admissible partners shrink, so `hi` only moves down.
    let mut hi = n;
    for i in 0..n {
        while hi > 0 && pair_avg(sorted[i], sorted[hi - 1]) > t {
            hi -= 1;
        }
        count += hi as u64;
    }
    if !self_pairs {
        count -= sorted.iter().filter(|&&x| x <= t).count() as u64;
    }
    count
}

/// `k`-th smallest (1-based) ordered-pair average.
fn kth_pair_average(sorted: &[f64], self_pairs: bool, k: u64) -> f64 {
    let mut lo = sorted[0];
    let mut hi = sorted[sorted.len() - 1];
    // Invariant: count(lo) < k ≤ count(hi), unless lo is already the answer.
    if count_le(sorted, self_pairs, lo) >= k {
        return lo;
    }
    loop {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            return hi;
        }
        if count_le(sorted, self_pairs, mid) >= k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
}

/// True when `α[j][h] = α[n-1-j][n-1-h]` within the stochastic tolerance.
pub fn satisfies_symmetry_condition(alpha: &MisplacementMatrix) -> bool {
    alpha.is_centrosymmetric(STOCHASTIC_TOL)
}

/// `f̂*(x) = ½(f̂(x) + f̂(2μ − x))` with the centre from `loc`. When `alpha`
/// is given and lacks the mirror symmetry the estimator is still returned
/// and a warning is logged.
pub fn kde_pros_symmetric(
    sample: &ProsSample,
    kernel: Kernel,
    bw: BandwidthSpec,
    grid: &GridSpec,
    loc: LocationEstimator,
    alpha: Option<&MisplacementMatrix>,
) -> Result<DensityEstimate> {
    if let Some(a) = alpha {
        if !satisfies_symmetry_condition(a) {
            log::warn!("misplacement matrix is not mirror-symmetric; reflected estimate may be biased");
        }
    }
    let values = sample.values();
    let h = bw.resolve(&values)?;
    let mu = estimate_location(sample, loc)?;
    let grid = grid.build(&values, kernel, h);
    let mut est = kde_pooled(&values, kernel, h, &grid)?;
    let mirrored: Vec<f64> = grid.iter().map(|&x| 2.0 * mu - x).collect();
    let reflected = kde_values(&values, kernel, h, &mirrored)?;
    for (f, r) in est.f_hat.iter_mut().zip(reflected) {
        *f = 0.5 * (*f + r);
    }
    est.design_tag = sample.tag();
    est.design = Some(*sample.design());
    est.reflection = Some(ReflectionInfo { estimator: loc, mu });
    Ok(est)
}

/// Reflection average of an already-fitted estimate's values, evaluated on
/// `points`; used where the plain and reflected estimates share one grid.
pub fn reflect_values(values: &[f64], kernel: Kernel, h: f64, mu: f64, points: &[f64]) -> Result<Vec<f64>> {
    let direct = kde_values(values, kernel, h, points)?;
    let mirrored: Vec<f64> = points.iter().map(|&x| 2.0 * mu - x).collect();
    let reflected = kde_values(values, kernel, h, &mirrored)?;
    Ok(direct.iter().zip(reflected).map(|(a, b)| 0.5 * (a + b)).collect())
}
