//! Kernel density estimation for SRS, RSS and PROS samples, with the
//! reference-rule bandwidth, the plug-in variance estimate and pointwise
//! normal-theory confidence bounds.
//!
//! The PROS estimate is the plain pooled average over all `N = nL`
//! observations. The per-subset estimates `f̂_[j]` share its bandwidth and feed
//! the variance estimate
//!
//! ```text
//! v̂(x) = f̂(x)·∫K² / (N h) − Σ_j f̂_[j](x)² / (N n)
//! ```
//!
//! which is clamped at zero where the second term dominates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::distributions::Design;
use crate::error::{Error, Result};
use crate::quadrature::linspace;
use crate::sampling::{format_float, DesignTag, ProsSample};
use crate::stats;

pub const DEFAULT_GRID_POINTS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `0.75 (1 − u²)` on `|u| ≤ 1`.
    Epanechnikov,
    /// The same shape rescaled to unit variance: `3/(4√5) (1 − u²/5)` on
    /// `|u| < √5`. Equivalent to the standard form at bandwidth `√5 h`.
    #[serde(rename = "epanechnikov_unit")]
    EpanechnikovUnit,
    Gaussian,
}

const SQRT_5: f64 = 2.236_067_977_499_79;

impl Kernel {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            Kernel::EpanechnikovUnit => {
                if u.abs() < SQRT_5 {
                    0.75 / SQRT_5 * (1.0 - u * u / 5.0)
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => (-0.5 * u * u).exp() * (0.5 * std::f64::consts::FRAC_1_PI).sqrt(),
        }
    }

    /// `∫ K(u)² du`.
    pub fn i0_k2(&self) -> f64 {
        match self {
            Kernel::Epanechnikov => 0.6,
            Kernel::EpanechnikovUnit => 0.6 / SQRT_5,
            Kernel::Gaussian => 0.5 / std::f64::consts::PI.sqrt(),
        }
    }

    /// `∫ u² K(u) du`.
    pub fn i2_k(&self) -> f64 {
        match self {
            Kernel::Epanechnikov => 0.2,
            Kernel::EpanechnikovUnit => 1.0,
            Kernel::Gaussian => 1.0,
        }
    }

    /// Half-width, in bandwidths, used to pad default evaluation grids.
    pub fn support_radius(&self) -> f64 {
        match self {
            Kernel::Epanechnikov => 1.0,
            Kernel::EpanechnikovUnit => SQRT_5,
            Kernel::Gaussian => 4.0,
        }
    }

    // Beyond this many bandwidths the kernel is exactly zero in f64.
    pub fn cutoff(&self) -> f64 {
        match self {
            Kernel::Epanechnikov => 1.0,
            Kernel::EpanechnikovUnit => SQRT_5,
            Kernel::Gaussian => 38.7,
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" => Ok(Kernel::Epanechnikov),
            "epanechnikov_unit" | "epanechnikov-unit" | "epa-unit" => Ok(Kernel::EpanechnikovUnit),
            "gaussian" | "normal" => Ok(Kernel::Gaussian),
            other => Err(Error::InvalidParameter(format!("unknown kernel {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "h")]
pub enum BandwidthSpec {
    Fixed(f64),
    SilvermanReference,
}

impl BandwidthSpec {
    pub fn resolve(&self, values: &[f64]) -> Result<f64> {
        match *self {
            BandwidthSpec::Fixed(h) => check_bandwidth(h),
            BandwidthSpec::SilvermanReference => bandwidth_silverman(values),
        }
    }
}

impl std::str::FromStr for BandwidthSpec {
    type Err = Error;
    /// `silverman` or a positive number.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "silverman" | "silverman_reference" | "reference" => Ok(BandwidthSpec::SilvermanReference),
            other => {
                let h: f64 = other.parse().map_err(|_| {
                    Error::InvalidParameter(format!("bandwidth {other:?} is neither a number nor 'silverman'"))
                })?;
                check_bandwidth(h).map(BandwidthSpec::Fixed)
            }
        }
    }
}

fn check_bandwidth(h: f64) -> Result<f64> {
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(Error::Bandwidth(h))
    }
}

/// Reference rule `h = (4/3)^{1/5} · min(sd, IQR/1.34) · N^{-1/5}`, with the
/// `N − 1` standard deviation and type-7 quartiles.
pub fn bandwidth_silverman(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::DegenerateSample("need at least two values".into()));
    }
    let sorted = stats::sorted_copy(values);
    let iqr = stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25);
    let sd = stats::sample_sd(values);
    let a = sd.min(iqr / 1.34);
    if !(a > 0.0) {
        if sd > 0.0 {
            // Quartiles coincide but the sample is not constant; fall back to
            // the standard deviation alone.
            return check_bandwidth((4.0f64 / 3.0).powf(0.2) * sd * (values.len() as f64).powf(-0.2));
        }
        return Err(Error::DegenerateSample("all values are identical".into()));
    }
    check_bandwidth((4.0f64 / 3.0).powf(0.2) * a * (values.len() as f64).powf(-0.2))
}

/// Equally spaced grid over `[min − c·h, max + c·h]`, `c` the kernel's
/// support radius.
pub fn default_grid(values: &[f64], kernel: Kernel, h: f64, points: usize) -> Vec<f64> {
    let (lo, hi) = min_max(values);
    let pad = kernel.support_radius() * h;
    linspace(lo - pad, hi + pad, points)
}

pub(crate) fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("evaluation grid is empty".into()));
    }
    if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "evaluation grid must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// `Σ_i K((x − X_i)/h)` at each grid point. `sorted` must be ascending.
fn kernel_sums(sorted: &[f64], kernel: Kernel, h: f64, grid: &[f64]) -> Vec<f64> {
    let reach = kernel.cutoff() * h;
    grid.iter()
        .map(|&x| {
            let start = sorted.partition_point(|&v| v < x - reach);
            let end = sorted.partition_point(|&v| v <= x + reach);
            sorted[start..end].iter().map(|&v| kernel.eval((x - v) / h)).sum()
        })
        .collect()
}

/// Unweighted KDE `(1/(N h)) Σ K((x − X_i)/h)` evaluated at arbitrary points
/// (no ordering requirement).
pub fn kde_values(values: &[f64], kernel: Kernel, h: f64, points: &[f64]) -> Result<Vec<f64>> {
    check_bandwidth(h)?;
    if values.is_empty() {
        return Err(Error::DegenerateSample("sample is empty".into()));
    }
    let sorted = stats::sorted_copy(values);
    let scale = 1.0 / (values.len() as f64 * h);
    Ok(kernel_sums(&sorted, kernel, h, points)
        .into_iter()
        .map(|s| s * scale)
        .collect())
}

/// Pointwise location recorded for reflection-averaged estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionInfo {
    pub estimator: crate::symmetric::LocationEstimator,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub var_hat: Option<Vec<f64>>,
    pub clamped: Option<Vec<bool>>,
    pub ci_lo: Option<Vec<f64>>,
    pub ci_hi: Option<Vec<f64>>,
    pub nu: Option<f64>,
    pub design_tag: DesignTag,
    pub design: Option<Design>,
    pub kernel: Kernel,
    pub bandwidth_used: f64,
    pub sample_size: usize,
    /// Smallest and largest observation.
    pub data_range: (f64, f64),
    pub reflection: Option<ReflectionInfo>,
}

impl DensityEstimate {
    /// Trapezoid integral of `f_hat` over the grid.
    pub fn integral(&self) -> f64 {
        crate::quadrature::trapezoid(&self.grid, &self.f_hat)
    }

    /// Writes `x,f_hat,var_hat,ci_lo,ci_hi,clamped_flag`; absent columns are
    /// left empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "f_hat", "var_hat", "ci_lo", "ci_hi", "clamped_flag"])?;
        let opt = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map(|v| format_float(v[i])).unwrap_or_default();
        for i in 0..self.grid.len() {
            let flag = self
                .clamped
                .as_ref()
                .map(|c| if c[i] { "1" } else { "0" }.to_string())
                .unwrap_or_default();
            w.write_record([
                format_float(self.grid[i]),
                format_float(self.f_hat[i]),
                opt(&self.var_hat, i),
                opt(&self.ci_lo, i),
                opt(&self.ci_hi, i),
                flag,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

/// Plain KDE of a set of values, treated as an SRS.
pub fn kde_pooled(values: &[f64], kernel: Kernel, h: f64, grid: &[f64]) -> Result<DensityEstimate> {
    check_grid(grid)?;
    let f_hat = kde_values(values, kernel, h, grid)?;
    Ok(DensityEstimate {
        grid: grid.to_vec(),
        f_hat,
        var_hat: None,
        clamped: None,
        ci_lo: None,
        ci_hi: None,
        nu: None,
        design_tag: DesignTag::Srs,
        design: None,
        kernel,
        bandwidth_used: h,
        sample_size: values.len(),
        data_range: min_max(values),
        reflection: None,
    })
}

/// Pooled PROS estimate together with the per-subset estimates `f̂_[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsDensity {
    pub estimate: DensityEstimate,
    pub per_subset: Vec<Vec<f64>>,
}

/// Grid choice for estimators: explicit points or the default grid.
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    Default(usize),
    Points(Vec<f64>),
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Default(DEFAULT_GRID_POINTS)
    }
}

impl GridSpec {
    pub fn build(&self, values: &[f64], kernel: Kernel, h: f64) -> Vec<f64> {
        match self {
            GridSpec::Default(points) => default_grid(values, kernel, h, *points),
            GridSpec::Points(p) => p.clone(),
        }
    }
}

pub fn kde_pros(sample: &ProsSample, kernel: Kernel, bw: BandwidthSpec, grid: &GridSpec) -> Result<ProsDensity> {
    let values = sample.values();
    let h = bw.resolve(&values)?;
    let grid = grid.build(&values, kernel, h);
    let mut estimate = kde_pooled(&values, kernel, h, &grid)?;
    estimate.design_tag = sample.tag();
    estimate.design = Some(*sample.design());
    let per_subset = (0..sample.design().n_subsets)
        .map(|j| kde_values(&sample.subset_values(j), kernel, h, &grid))
        .collect::<Result<_>>()?;
    Ok(ProsDensity { estimate, per_subset })
}

/// Variance estimate with its per-point clamp flags.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub var_hat: Vec<f64>,
    pub clamped: Vec<bool>,
}

/// Plug-in variance of the PROS estimate from a fitted [`ProsDensity`].
pub fn variance_from_fit(fit: &ProsDensity) -> VarianceEstimate {
    let est = &fit.estimate;
    let n_total = est.sample_size as f64;
    let n = fit.per_subset.len() as f64;
    let h = est.bandwidth_used;
    let i0 = est.kernel.i0_k2();
    let (var_hat, clamped) = (0..est.grid.len())
        .map(|k| {
            let sq: f64 = fit.per_subset.iter().map(|f| f[k] * f[k]).sum();
            let v = est.f_hat[k] * i0 / (n_total * h) - sq / (n_total * n);
            if v < 0.0 {
                (0.0, true)
            } else {
                (v, false)
            }
        })
        .unzip();
    VarianceEstimate { var_hat, clamped }
}

pub fn pros_variance_estimate(sample: &ProsSample, kernel: Kernel, h: f64, grid: &[f64]) -> Result<VarianceEstimate> {
    check_grid(grid)?;
    let fit = kde_pros(
        sample,
        kernel,
        BandwidthSpec::Fixed(h),
        &GridSpec::Points(grid.to_vec()),
    )?;
    Ok(variance_from_fit(&fit))
}

/// Attaches `f̂ ± z_{ν/2} √v̂` bounds; the lower bound is floored at zero.
pub fn pointwise_ci(estimate: &DensityEstimate, nu: f64) -> Result<DensityEstimate> {
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::ProbabilityDomain(nu));
    }
    let var = estimate
        .var_hat
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("estimate has no variance values".into()))?;
    let z = stats::standard_normal_quantile(1.0 - 0.5 * nu);
    let mut out = estimate.clone();
    let half: Vec<f64> = var.iter().map(|v| z * v.sqrt()).collect();
    out.ci_lo = Some(
        estimate
            .f_hat
            .iter()
            .zip(&half)
            .map(|(f, w)| (f - w).max(0.0))
            .collect(),
    );
    out.ci_hi = Some(estimate.f_hat.iter().zip(&half).map(|(f, w)| f + w).collect());
    out.nu = Some(nu);
    Ok(out)
}

/// Fits the pooled estimate, its variance, and (when `nu` is given) the
/// pointwise confidence band in one pass.
pub fn estimate_with_ci(
    sample: &ProsSample,
    kernel: Kernel,
    bw: BandwidthSpec,
    grid: &GridSpec,
    nu: Option<f64>,
) -> Result<DensityEstimate> {
    let fit = kde_pros(sample, kernel, bw, grid)?;
    let var = variance_from_fit(&fit);
    let mut est = fit.estimate;
    est.var_hat = Some(var.var_hat);
    est.clamped = Some(var.clamped);
    match nu {
        Some(nu) => pointwise_ci(&est, nu),
        None => Ok(est),
    }
}

/// `(1/N) Σ h(X)` over every observation.
pub fn moment_estimator<F: Fn(f64) -> f64>(sample: &ProsSample, h_fn: F) -> f64 {
    let obs = sample.observations();
    obs.iter().map(|o| h_fn(o.value)).sum::<f64>() / obs.len() as f64
}
