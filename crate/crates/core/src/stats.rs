//! Small descriptive-statistics helpers shared across modules.

use serde::{Deserialize, Serialize};
use statrs::function::erf;

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with divisor `n - 1`. Returns 0 for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

pub fn sample_sd(values: &[f64]) -> f64 {
    sample_variance(values).sqrt()
}

/// Linear-interpolation (type 7) quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Median; even counts average the two central values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    median_in_place(&mut v)
}

pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Upper `prob` quantile of the standard normal, i.e. `Φ⁻¹(prob)`.
pub fn standard_normal_quantile(prob: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * prob)
}

/// Mean of a replicate sequence with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn from_values(values: &[f64]) -> Self {
        MeanSe {
            mean: mean(values),
            se: (sample_variance(values) / values.len() as f64).sqrt(),
        }
    }
}

/// Ratio of two replicate means `mean(num) / mean(den)` with a delta-method
/// standard error. When `paired` is true the two sequences come from the same
/// replicates and their covariance enters the error.
pub fn ratio_with_se(num: &[f64], den: &[f64], paired: bool) -> MeanSe {
    let a = mean(num);
    let b = mean(den);
    let r = a / b;
    let na = num.len() as f64;
    let nb = den.len() as f64;
    let var_a = sample_variance(num) / na;
    let var_b = sample_variance(den) / nb;
    let cov = if paired && num.len() == den.len() && num.len() > 1 {
        num.iter().zip(den).map(|(x, y)| (x - a) * (y - b)).sum::<f64>() / (na - 1.0) / na
    } else {
        0.0
    };
    let var_r = (var_a - 2.0 * r * cov + r * r * var_b) / (b * b);
    MeanSe {
        mean: r,
        se: var_r.max(0.0).sqrt(),
    }
}
