//! Distribution-free efficiency quantities.
//!
//! At a point with `p = F(x)`, every subset density is `n·f(x)` times a
//! binomial block probability, so variance ratios between designs depend on
//! `p` alone. With `P_r(p) = P(Y ∈ {(r)m, …, (r+1)m − 1})`, `Y ~ Bin(s−1, p)`:
//!
//! ```text
//! (1/n) Σ_j f_[j]² = n f² Σ_j (Σ_r α[j][r] P_r)²
//! RRV(PROS, SRS)   = 1 − 1 / (n Σ_j (Σ_r α[j][r] P_r)²)
//! ```
//!
//! For perfect designs the sum of squared block probabilities is the
//! probability that two independent `Bin(s−1, p)` draws land in the same rank
//! block ([`block_collision_probability`]). It reduces to the point collision
//! probability `P(Y = Z)` only when `m = 1`.

use serde::{Deserialize, Serialize};

use crate::distributions::{
    binomial_pmf, block_probabilities, subset_pdfs, Design, Distribution, MisplacementMatrix, RssErrorMatrix,
};
use crate::error::{Error, Result};
use crate::quadrature::{integrate_with, QuadConfig};

fn check_open(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::ProbabilityDomain(p))
    }
}

fn check_alpha(design: &Design, alpha: &MisplacementMatrix) -> Result<()> {
    if alpha.dim() != design.n_subsets {
        return Err(Error::DesignMismatch(format!(
            "misplacement matrix is {0}×{0} but the design has n = {1} subsets",
            alpha.dim(),
            design.n_subsets
        )));
    }
    Ok(())
}

/// `n Σ_j (Σ_r α[j][r] P_r(p))²`, i.e. `(1/n) Σ_j f_[j]² / f²`.
pub fn pros_second_moment_ratio(design: &Design, alpha: &MisplacementMatrix, p: f64) -> Result<f64> {
    check_alpha(design, alpha)?;
    let blocks = block_probabilities(design, p, 1.0 - p);
    let n = design.n_subsets;
    let sum: f64 = (0..n)
        .map(|j| {
            let inner: f64 = alpha.row(j).iter().zip(&blocks).map(|(a, b)| a * b).sum();
            inner * inner
        })
        .sum();
    Ok(n as f64 * sum)
}

/// Reduction in asymptotic variance of the PROS estimate relative to SRS.
pub fn rrv_vs_srs(design: &Design, alpha: &MisplacementMatrix, p: f64) -> Result<f64> {
    check_open(p)?;
    Ok(1.0 - 1.0 / pros_second_moment_ratio(design, alpha, p)?)
}

/// Reduction in asymptotic variance of the PROS estimate relative to an
/// imperfect RSS of set size `n` with ranking-error matrix `rss_p`.
pub fn rrv_vs_rss(design: &Design, alpha: &MisplacementMatrix, rss_p: &RssErrorMatrix, p: f64) -> Result<f64> {
    check_open(p)?;
    let n = design.n_subsets;
    if rss_p.dim() != n {
        return Err(Error::DesignMismatch(format!(
            "RSS error matrix is {0}×{0}, expected {n}×{n}",
            rss_p.dim()
        )));
    }
    let a = pros_second_moment_ratio(design, alpha, p)?;
    let pmf: Vec<f64> = (0..n).map(|k| binomial_pmf(n - 1, k, p, 1.0 - p)).collect();
    let b: f64 = n as f64
        * (0..n)
            .map(|r| {
                let inner: f64 = rss_p.row(r).iter().zip(&pmf).map(|(q, b)| q * b).sum();
                inner * inner
            })
            .sum::<f64>();
    Ok((a - b) / a)
}

/// RRV against SRS from actual subset densities at `x`:
/// `1 − f² / ((1/n) Σ_j f_[j]²)`.
pub fn rrv_vs_srs_from_densities(
    dist: &Distribution,
    design: &Design,
    alpha: &MisplacementMatrix,
    x: f64,
) -> Result<f64> {
    let f = dist.pdf(x);
    let pdfs = subset_pdfs(dist, design, alpha, x)?;
    let mean_sq = pdfs.iter().map(|v| v * v).sum::<f64>() / design.n_subsets as f64;
    if !(mean_sq > 0.0) {
        return Err(Error::ProbabilityDomain(dist.cdf(x)));
    }
    Ok(1.0 - f * f / mean_sq)
}

/// `P(Y = Z)` for independent `Y, Z ~ Bin(s−1, p)`.
pub fn collision_probability(s: usize, p: f64) -> Result<f64> {
    if s == 0 {
        return Err(Error::InvalidDesign("set size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ProbabilityDomain(p));
    }
    Ok((0..s).map(|k| binomial_pmf(s - 1, k, p, 1.0 - p).powi(2)).sum())
}

/// Normal-approximation `1/√(4 s π p(1−p))` of [`collision_probability`].
pub fn collision_edgeworth(s: usize, p: f64) -> Result<f64> {
    check_open(p)?;
    if s == 0 {
        return Err(Error::InvalidDesign("set size must be positive".into()));
    }
    Ok(1.0 / (4.0 * s as f64 * std::f64::consts::PI * p * (1.0 - p)).sqrt())
}

/// Probability that two independent `Bin(s−1, p)` draws fall in the same
/// rank block of the design: `Σ_j P_j(p)²`.
pub fn block_collision_probability(design: &Design, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ProbabilityDomain(p));
    }
    Ok(block_probabilities(design, p, 1.0 - p).iter().map(|b| b * b).sum())
}

/// Quantile range used for integrals over the real line.
fn integration_range(dist: &Distribution) -> (f64, f64) {
    (dist.quantile(1e-8), dist.quantile(1.0 - 1e-8))
}

fn quad() -> QuadConfig {
    QuadConfig {
        abs_tol: 1e-8,
        rel_tol: 0.0,
        max_subdivisions: 4000,
    }
}

/// `Δ(f, n) = ∫ [(1/n) Σ_j f_[j]² − f²] dx`, the leading integrated variance
/// reduction of the PROS estimate over SRS.
pub fn delta_f_n(dist: &Distribution, design: &Design, alpha: &MisplacementMatrix) -> Result<f64> {
    check_alpha(design, alpha)?;
    dist.validate()?;
    let (lo, hi) = integration_range(dist);
    let n = design.n_subsets as f64;
    let integrand = |x: f64| {
        let f = dist.pdf(x);
        match subset_pdfs(dist, design, alpha, x) {
            Ok(v) => v.iter().map(|g| g * g).sum::<f64>() / n - f * f,
            Err(_) => f64::NAN,
        }
    };
    integrate_with(integrand, lo, hi, quad())
}

/// `i₀(f²) = ∫ f² dx`.
pub fn integral_f_squared(dist: &Distribution) -> Result<f64> {
    let (lo, hi) = integration_range(dist);
    integrate_with(|x| dist.pdf(x).powi(2), lo, hi, quad())
}

/// `δ(f²) = ∫ f² / √(4π F (1 − F)) dx`.
pub fn delta_f_squared(dist: &Distribution) -> Result<f64> {
    let (lo, hi) = integration_range(dist);
    integrate_with(
        |x| {
            let f = dist.pdf(x);
            let (p, q) = (dist.cdf(x), dist.sf(x));
            if p <= 0.0 || q <= 0.0 {
                0.0
            } else {
                f * f / (4.0 * std::f64::consts::PI * p * q).sqrt()
            }
        },
        lo,
        hi,
        quad(),
    )
}

/// Large-`s` approximation `√(n/m) δ(f²) − i₀(f²)` of [`delta_f_n`] for a
/// perfect design, built from the point collision probability and its normal
/// approximation.
pub fn delta_f_n_approx(dist: &Distribution, design: &Design) -> Result<f64> {
    let ratio = (design.n_subsets as f64 / design.subset_size as f64).sqrt();
    Ok(ratio * delta_f_squared(dist)? - integral_f_squared(dist)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "rss_error")]
pub enum Baseline {
    Srs,
    Rss(RssErrorMatrix),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrvCurve {
    pub design: Design,
    pub alpha: MisplacementMatrix,
    pub baseline: Baseline,
    pub p_grid: Vec<f64>,
    pub rrv: Vec<f64>,
}

/// `p = 0.01, 0.02, …, 0.99`.
pub fn default_p_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

pub fn rrv_curve(design: &Design, alpha: &MisplacementMatrix, baseline: Baseline, p_grid: &[f64]) -> Result<RrvCurve> {
    let rrv = p_grid
        .iter()
        .map(|&p| match &baseline {
            Baseline::Srs => rrv_vs_srs(design, alpha, p),
            Baseline::Rss(q) => rrv_vs_rss(design, alpha, q, p),
        })
        .collect::<Result<_>>()?;
    Ok(RrvCurve {
        design: *design,
        alpha: alpha.clone(),
        baseline,
        p_grid: p_grid.to_vec(),
        rrv,
    })
}
