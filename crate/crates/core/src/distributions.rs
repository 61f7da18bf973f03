//! Population distributions, PROS designs, misplacement matrices, and the
//! order-statistic / subset densities derived from them.
//!
//! A PROS design with `n` subsets of size `m` ranks a set of `s = n·m` units
//! into consecutive rank blocks `d_j = {(j-1)m+1, …, jm}`. A measurement taken
//! from nominal subset `j` actually comes from block `h` with probability
//! `α[j][h]`, so its density is a mixture of order-statistic densities:
//!
//! ```text
//! f_[j](x) = (1/m) Σ_h α[j][h] Σ_{u ∈ d_h} f_(u:s)(x)
//! ```
//!
//! Subset indices are zero-based throughout the crate; ranks of order
//! statistics are one-based, matching the usual `X_(u:s)` notation.
//!
//! The Gumbel family is the maximum-type law with cdf `exp(-exp(-(x-loc)/scale))`.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{self as rd, Open01};
use serde::{Deserialize, Serialize};
use statrs::function::{beta, erf, factorial, gamma};

use crate::error::{Error, Result};

/// Tolerance for row/column sums of doubly stochastic matrices.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Univariate population families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distribution {
    Uniform01,
    Normal { mean: f64, sd: f64 },
    Exponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
    Gumbel { loc: f64, scale: f64 },
    Logistic { loc: f64, scale: f64 },
    Laplace { loc: f64, scale: f64 },
    StudentT { df: f64 },
}

impl Distribution {
    pub const STANDARD_NORMAL: Distribution = Distribution::Normal { mean: 0.0, sd: 1.0 };

    pub fn validate(&self) -> Result<()> {
        use Distribution::*;
        let ok = match *self {
            Uniform01 => true,
            Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            Exponential { rate } => rate > 0.0 && rate.is_finite(),
            Gamma { shape, scale } => shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite(),
            Gumbel { loc, scale } | Logistic { loc, scale } | Laplace { loc, scale } => {
                loc.is_finite() && scale > 0.0 && scale.is_finite()
            }
            StudentT { df } => df > 0.0 && df.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid distribution parameters: {self}"
            )))
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        use Distribution::*;
        match *self {
            Uniform01 => {
                if (0.0..=1.0).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            Normal { mean, sd } => {
                let z = (x - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            Exponential { rate } => {
                if x < 0.0 {
                    0.0
                } else {
                    rate * (-rate * x).exp()
                }
            }
            Gamma { shape, scale } => {
                if x < 0.0 {
                    0.0
                } else if x == 0.0 {
                    match shape.partial_cmp(&1.0) {
                        Some(std::cmp::Ordering::Less) => f64::INFINITY,
                        Some(std::cmp::Ordering::Equal) => 1.0 / scale,
                        _ => 0.0,
                    }
                } else {
                    let t = x / scale;
                    ((shape - 1.0) * t.ln() - t - gamma::ln_gamma(shape)).exp() / scale
                }
            }
            Gumbel { loc, scale } => {
                let z = (x - loc) / scale;
                (-(z + (-z).exp())).exp() / scale
            }
            Logistic { loc, scale } => {
                let z = ((x - loc) / scale).abs();
                let e = (-z).exp();
                e / (scale * (1.0 + e) * (1.0 + e))
            }
            Laplace { loc, scale } => (-((x - loc) / scale).abs()).exp() / (2.0 * scale),
            StudentT { df } => {
                let ln_norm = gamma::ln_gamma(0.5 * (df + 1.0))
                    - gamma::ln_gamma(0.5 * df)
                    - 0.5 * (df * std::f64::consts::PI).ln();
                (ln_norm - 0.5 * (df + 1.0) * (x * x / df).ln_1p()).exp()
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        use Distribution::*;
        match *self {
            Uniform01 => x.clamp(0.0, 1.0),
            Normal { mean, sd } => 0.5 * erf::erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2)),
            Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Gamma { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma::gamma_lr(shape, x / scale)
                }
            }
            Gumbel { loc, scale } => (-(-(x - loc) / scale).exp()).exp(),
            Logistic { loc, scale } => 1.0 / (1.0 + (-(x - loc) / scale).exp()),
            Laplace { loc, scale } => {
                let z = (x - loc) / scale;
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
            StudentT { df } => {
                if x < 0.0 {
                    student_t_tail(df, x)
                } else {
                    1.0 - student_t_tail(df, x)
                }
            }
        }
    }

    /// Survival function `1 - F(x)`, computed without cancellation in the
    /// upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        use Distribution::*;
        match *self {
            Uniform01 => 1.0 - x.clamp(0.0, 1.0),
            Normal { mean, sd } => 0.5 * erf::erfc((x - mean) / (sd * std::f64::consts::SQRT_2)),
            Exponential { rate } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-rate * x).exp()
                }
            }
            Gamma { shape, scale } => {
                if x <= 0.0 {
                    1.0
                } else {
                    gamma::gamma_ur(shape, x / scale)
                }
            }
            Gumbel { loc, scale } => -(-(-(x - loc) / scale).exp()).exp_m1(),
            Logistic { loc, scale } => 1.0 / (1.0 + ((x - loc) / scale).exp()),
            Laplace { loc, scale } => {
                let z = (x - loc) / scale;
                if z < 0.0 {
                    1.0 - 0.5 * z.exp()
                } else {
                    0.5 * (-z).exp()
                }
            }
            StudentT { df } => {
                if x > 0.0 {
                    student_t_tail(df, x)
                } else {
                    1.0 - student_t_tail(df, x)
                }
            }
        }
    }

    /// Inverse cdf. Closed forms where they exist; the normal uses the inverse
    /// complementary error function, gamma and Student-t polish a starting
    /// guess by safeguarded Newton iteration on the cdf (relative accuracy
    /// well below 1e-9 on the interior of the support).
    pub fn quantile(&self, prob: f64) -> f64 {
        use Distribution::*;
        if prob.is_nan() || !(0.0..=1.0).contains(&prob) {
            return f64::NAN;
        }
        match *self {
            Uniform01 => prob,
            Normal { mean, sd } => mean - sd * std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * prob),
            Exponential { rate } => -(-prob).ln_1p() / rate,
            Gumbel { loc, scale } => loc - scale * (-prob.ln()).ln(),
            Logistic { loc, scale } => loc + scale * (prob / (1.0 - prob)).ln(),
            Laplace { loc, scale } => {
                if prob < 0.5 {
                    loc + scale * (2.0 * prob).ln()
                } else {
                    loc - scale * (2.0 - 2.0 * prob).ln()
                }
            }
            Gamma { shape, scale } => {
                if prob == 0.0 {
                    return 0.0;
                }
                if prob == 1.0 {
                    return f64::INFINITY;
                }
                // Wilson–Hilferty start.
                let z = crate::stats::standard_normal_quantile(prob);
                let c = 1.0 / (9.0 * shape);
                let guess = shape * scale * (1.0 - c + z * c.sqrt()).powi(3);
                let guess = if guess > 0.0 {
                    guess
                } else {
                    shape * scale * prob.powf(1.0 / shape)
                };
                invert_cdf(self, prob, guess.max(f64::MIN_POSITIVE), Some(0.0))
            }
            StudentT { df } => {
                if prob == 0.0 {
                    return f64::NEG_INFINITY;
                }
                if prob == 1.0 {
                    return f64::INFINITY;
                }
                if prob == 0.5 {
                    return 0.0;
                }
                if df == 2.0 {
                    // Closed form for two degrees of freedom.
                    let a = 4.0 * prob * (1.0 - prob);
                    return (2.0 * prob - 1.0) * (2.0 / a).sqrt();
                }
                let z = crate::stats::standard_normal_quantile(prob);
                invert_cdf(self, prob, z, None)
            }
        }
    }

    /// Centre of symmetry, for the symmetric families.
    pub fn center(&self) -> Option<f64> {
        use Distribution::*;
        match *self {
            Uniform01 => Some(0.5),
            Normal { mean, .. } => Some(mean),
            Logistic { loc, .. } | Laplace { loc, .. } => Some(loc),
            StudentT { .. } => Some(0.0),
            Exponential { .. } | Gamma { .. } | Gumbel { .. } => None,
        }
    }

    /// Prepares a reusable variate generator.
    pub fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        use Distribution::*;
        let bad = |e: &dyn fmt::Display| Error::InvalidParameter(e.to_string());
        Ok(match *self {
            Uniform01 => Sampler::Uniform,
            Normal { mean, sd } => Sampler::Normal(rd::Normal::new(mean, sd).map_err(|e| bad(&e))?),
            Exponential { rate } => Sampler::Exponential(rd::Exp::new(rate).map_err(|e| bad(&e))?),
            Gamma { shape, scale } => Sampler::Gamma(rd::Gamma::new(shape, scale).map_err(|e| bad(&e))?),
            Gumbel { loc, scale } => Sampler::Gumbel(rd::Gumbel::new(loc, scale).map_err(|e| bad(&e))?),
            Logistic { .. } | Laplace { .. } => Sampler::Inverse(*self),
            StudentT { df } => Sampler::StudentT(rd::StudentT::new(df).map_err(|e| bad(&e))?),
        })
    }
}

fn student_t_tail(df: f64, x: f64) -> f64 {
    // P(T > |x|) = I_{df/(df+x²)}(df/2, 1/2) / 2
    let t = df / (df + x * x);
    0.5 * beta::beta_reg(0.5 * df, 0.5, t)
}

/// Solves `F(x) = prob` (or `S(x) = 1 - prob` in the upper half) starting at
/// `guess`, with bisection fallback once a bracket is known.
fn invert_cdf(dist: &Distribution, prob: f64, guess: f64, lower_bound: Option<f64>) -> f64 {
    let upper = prob > 0.5;
    let target = if upper { 1.0 - prob } else { prob };
    // g is increasing in x.
    let g = |x: f64| {
        if upper {
            target - dist.sf(x)
        } else {
            dist.cdf(x) - target
        }
    };

    let mut lo;
    let mut hi;
    let g0 = g(guess);
    if g0 == 0.0 {
        return guess;
    }
    let mut step = guess.abs().max(1.0);
    if g0 < 0.0 {
        lo = guess;
        hi = guess + step;
        while g(hi) < 0.0 {
            lo = hi;
            step *= 2.0;
            hi += step;
        }
    } else {
        hi = guess;
        lo = guess - step;
        if let Some(b) = lower_bound {
            lo = lo.max(b);
        }
        while g(lo) > 0.0 {
            hi = lo;
            step *= 2.0;
            lo -= step;
            if let Some(b) = lower_bound {
                if lo <= b {
                    lo = b;
                    break;
                }
            }
        }
    }

    let mut x = guess.clamp(lo, hi);
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = dist.pdf(x);
        let newton = x - gx / d;
        let next = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) || hi - lo <= 1e-15 * x.abs().max(1e-300) {
            return next;
        }
        x = next;
    }
    x
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Distribution::*;
        match *self {
            Uniform01 => write!(f, "uniform"),
            Normal { mean, sd } => write!(f, "normal:{mean},{sd}"),
            Exponential { rate } => write!(f, "exponential:{rate}"),
            Gamma { shape, scale } => write!(f, "gamma:{shape},{scale}"),
            Gumbel { loc, scale } => write!(f, "gumbel:{loc},{scale}"),
            Logistic { loc, scale } => write!(f, "logistic:{loc},{scale}"),
            Laplace { loc, scale } => write!(f, "laplace:{loc},{scale}"),
            StudentT { df } => write!(f, "t:{df}"),
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;

    /// Parses `name[:p1[,p2]]`, e.g. `normal`, `gamma:3,1`, `t:2`. Omitted
    /// parameters take the standard values.
    fn from_str(s: &str) -> Result<Self> {
        let (name, params) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p)),
            None => (s.trim(), None),
        };
        let params: Vec<f64> = match params {
            None => Vec::new(),
            Some(p) => p
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidParameter(format!("bad distribution parameter {v:?}")))
                })
                .collect::<Result<_>>()?,
        };
        let get = |i: usize, default: f64| params.get(i).copied().unwrap_or(default);
        let max_params = |k: usize| {
            if params.len() > k {
                Err(Error::InvalidParameter(format!(
                    "{name} takes at most {k} parameter(s)"
                )))
            } else {
                Ok(())
            }
        };
        let dist = match name.to_ascii_lowercase().as_str() {
            "uniform" | "uniform01" => {
                max_params(0)?;
                Distribution::Uniform01
            }
            "normal" => {
                max_params(2)?;
                Distribution::Normal {
                    mean: get(0, 0.0),
                    sd: get(1, 1.0),
                }
            }
            "exponential" | "exp" => {
                max_params(1)?;
                Distribution::Exponential { rate: get(0, 1.0) }
            }
            "gamma" => {
                max_params(2)?;
                Distribution::Gamma {
                    shape: get(0, 3.0),
                    scale: get(1, 1.0),
                }
            }
            "gumbel" => {
                max_params(2)?;
                Distribution::Gumbel {
                    loc: get(0, 0.0),
                    scale: get(1, 1.0),
                }
            }
            "logistic" => {
                max_params(2)?;
                Distribution::Logistic {
                    loc: get(0, 0.0),
                    scale: get(1, 1.0),
                }
            }
            "laplace" => {
                max_params(2)?;
                Distribution::Laplace {
                    loc: get(0, 0.0),
                    scale: get(1, 1.0),
                }
            }
            "t" | "student_t" | "studentt" => {
                max_params(1)?;
                Distribution::StudentT { df: get(0, 2.0) }
            }
            other => return Err(Error::InvalidParameter(format!("unknown distribution {other:?}"))),
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// Prepared variate generator for a [`Distribution`].
#[derive(Debug, Clone, Copy)]
pub enum Sampler {
    Uniform,
    Normal(rd::Normal<f64>),
    Exponential(rd::Exp<f64>),
    Gamma(rd::Gamma<f64>),
    Gumbel(rd::Gumbel<f64>),
    StudentT(rd::StudentT<f64>),
    Inverse(Distribution),
}

impl rand_distr::Distribution<f64> for Sampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Uniform => Open01.sample(rng),
            Sampler::Normal(d) => d.sample(rng),
            Sampler::Exponential(d) => d.sample(rng),
            Sampler::Gamma(d) => d.sample(rng),
            Sampler::Gumbel(d) => d.sample(rng),
            Sampler::StudentT(d) => d.sample(rng),
            Sampler::Inverse(dist) => {
                let u: f64 = Open01.sample(rng);
                dist.quantile(u)
            }
        }
    }
}

/// A PROS design: `n_subsets` judgment subsets of `subset_size` units each
/// (set size `s = n·m`), repeated over `cycles` cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Design {
    pub n_subsets: usize,
    pub subset_size: usize,
    pub cycles: usize,
}

impl Design {
    pub fn new(n_subsets: usize, subset_size: usize, cycles: usize) -> Result<Self> {
        if n_subsets == 0 || subset_size == 0 || cycles == 0 {
            return Err(Error::InvalidDesign(format!(
                "n, m and L must be positive (got n={n_subsets}, m={subset_size}, L={cycles})"
            )));
        }
        Ok(Design {
            n_subsets,
            subset_size,
            cycles,
        })
    }

    /// Builds a design from a set size, checking `s = n·m`.
    pub fn from_set_size(set_size: usize, n_subsets: usize, cycles: usize) -> Result<Self> {
        if n_subsets == 0 || !set_size.is_multiple_of(n_subsets) {
            return Err(Error::InvalidDesign(format!(
                "set size {set_size} is not a multiple of n = {n_subsets}"
            )));
        }
        Design::new(n_subsets, set_size / n_subsets, cycles)
    }

    pub fn set_size(&self) -> usize {
        self.n_subsets * self.subset_size
    }

    /// Total sample size `N = n·L`.
    pub fn sample_size(&self) -> usize {
        self.n_subsets * self.cycles
    }

    /// One-based ranks `d_j` covered by zero-based subset `j`.
    pub fn subset_ranks(&self, j: usize) -> RangeInclusive<usize> {
        j * self.subset_size + 1..=(j + 1) * self.subset_size
    }
}

/// Doubly stochastic `n×n` matrix; entry `(j, h)` is the probability that a
/// unit recorded in nominal subset `j` truly belongs to rank block `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct MisplacementMatrix {
    dim: usize,
    entries: Vec<f64>,
}

/// Ranking-error probabilities `p_{rk}` of an imperfect RSS; same invariants.
pub type RssErrorMatrix = MisplacementMatrix;

impl MisplacementMatrix {
    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for j in 0..n {
            entries[j * n + j] = 1.0;
        }
        MisplacementMatrix { dim: n, entries }
    }

    /// Purely random subsetting: every entry `1/n`.
    pub fn uniform(n: usize) -> Self {
        MisplacementMatrix {
            dim: n,
            entries: vec![1.0 / n as f64; n * n],
        }
    }

    /// Diagonal `alpha0`, off-diagonal `(1 - alpha0)/(n - 1)`.
    pub fn alpha0_family(n: usize, alpha0: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha0) {
            return Err(Error::InvalidParameter(format!("alpha0 = {alpha0} outside [0, 1]")));
        }
        if n == 1 {
            return Ok(Self::identity(1));
        }
        let off = (1.0 - alpha0) / (n - 1) as f64;
        let mut entries = vec![off; n * n];
        for j in 0..n {
            entries[j * n + j] = alpha0;
        }
        Ok(MisplacementMatrix { dim: n, entries })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidParameter("misplacement matrix is empty".into()));
        }
        let mut entries = Vec::with_capacity(n * n);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "row {} has {} entries, expected {n}",
                    j + 1,
                    row.len()
                )));
            }
            entries.extend_from_slice(row);
        }
        let m = MisplacementMatrix { dim: n, entries };
        m.check()?;
        Ok(m)
    }

    /// Builds a matrix without validation; callers guarantee the invariants.
    pub(crate) fn from_entries_unchecked(dim: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), dim * dim);
        MisplacementMatrix { dim, entries }
    }

    fn check(&self) -> Result<()> {
        let n = self.dim;
        for (idx, &v) in self.entries.iter().enumerate() {
            if !(0.0..=1.0 + STOCHASTIC_TOL).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "entry ({}, {}) = {v} is outside [0, 1]",
                    idx / n + 1,
                    idx % n + 1
                )));
            }
        }
        for j in 0..n {
            let row: f64 = self.row(j).iter().sum();
            let col: f64 = (0..n).map(|i| self.get(i, j)).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidParameter(format!(
                    "matrix is not doubly stochastic: row {} sums to {row}, column {} sums to {col}",
                    j + 1,
                    j + 1
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, j: usize, h: usize) -> f64 {
        self.entries[j * self.dim + h]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.entries[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.dim).all(|j| (0..j).all(|h| (self.get(j, h) - self.get(h, j)).abs() <= tol))
    }

    /// `α[j][h] = α[n-1-j][n-1-h]` for all `j, h`: the condition under which
    /// subset densities of a symmetric population mirror each other.
    pub fn is_centrosymmetric(&self, tol: f64) -> bool {
        let n = self.dim;
        (0..n).all(|j| (0..n).all(|h| (self.get(j, h) - self.get(n - 1 - j, n - 1 - h)).abs() <= tol))
    }

    /// Upper-triangle entries (diagonal included) in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .flat_map(|j| (j..n).map(move |h| (j, h)))
            .map(|(j, h)| self.get(j, h))
            .collect()
    }

    /// Sum of absolute differences over the `n(n+1)/2` upper-triangle entries.
    pub fn sae(&self, other: &MisplacementMatrix) -> f64 {
        self.upper_triangle()
            .iter()
            .zip(other.upper_triangle())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    /// Largest deviation of any row or column sum from one.
    pub fn stochastic_defect(&self) -> f64 {
        let n = self.dim;
        (0..n)
            .map(|j| {
                let row: f64 = self.row(j).iter().sum();
                let col: f64 = (0..n).map(|i| self.get(i, j)).sum();
                (row - 1.0).abs().max((col - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<Vec<f64>>> for MisplacementMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        MisplacementMatrix::from_rows(rows)
    }
}

impl From<MisplacementMatrix> for Vec<Vec<f64>> {
    fn from(m: MisplacementMatrix) -> Self {
        m.rows()
    }
}

/// `x^k` in log space with the convention `0^0 = 1`.
#[inline]
fn ln_pow(base: f64, k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * base.ln()
    }
}

/// Binomial probability `C(trials, k) p^k q^(trials-k)`, where `q = 1 - p` is
/// passed separately so callers can supply an accurate survival value.
///
/// Up to 120 trials the coefficient is formed exactly in integers and the
/// powers by repeated multiplication; larger counts go through log space.
pub fn binomial_pmf(trials: usize, k: usize, p: f64, q: f64) -> f64 {
    if k > trials {
        return 0.0;
    }
    if trials <= 120 {
        let k_small = k.min(trials - k) as u128;
        let mut c: u128 = 1;
        for i in 0..k_small {
            c = c * (trials as u128 - i) / (i + 1);
        }
        return c as f64 * p.powi(k as i32) * q.powi((trials - k) as i32);
    }
    (factorial::ln_binomial(trials as u64, k as u64) + ln_pow(p, k) + ln_pow(q, trials - k)).exp()
}

/// `f_(u:s)(x) / f(x)`, i.e. the Beta(u, s-u+1) density at `p = F(x)`.
pub fn order_stat_factor(u: usize, s: usize, p: f64, q: f64) -> f64 {
    s as f64 * binomial_pmf(s - 1, u - 1, p, q)
}

/// Density of the `u`-th order statistic of `s` i.i.d. draws.
pub fn order_stat_pdf(dist: &Distribution, u: usize, s: usize, x: f64) -> Result<f64> {
    if u == 0 || u > s {
        return Err(Error::RankDomain { rank: u, set_size: s });
    }
    let fx = dist.pdf(x);
    if fx == 0.0 {
        return Ok(0.0);
    }
    Ok(order_stat_factor(u, s, dist.cdf(x), dist.sf(x)) * fx)
}

/// Probability that a Binomial(s-1, p) variable lands in each rank block
/// `{(h)m, …, (h+1)m - 1}`.
pub fn block_probabilities(design: &Design, p: f64, q: f64) -> Vec<f64> {
    let s = design.set_size();
    (0..design.n_subsets)
        .map(|h| design.subset_ranks(h).map(|u| binomial_pmf(s - 1, u - 1, p, q)).sum())
        .collect()
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

/// Density of a measurement from zero-based nominal subset `j`.
pub fn subset_pdf(dist: &Distribution, design: &Design, alpha: &MisplacementMatrix, j: usize, x: f64) -> Result<f64> {
    check_alpha(design, alpha)?;
    if j >= design.n_subsets {
        return Err(Error::DesignMismatch(format!(
            "subset index {j} out of range for n = {}",
            design.n_subsets
        )));
    }
    let fx = dist.pdf(x);
    if fx == 0.0 {
        return Ok(0.0);
    }
    let blocks = block_probabilities(design, dist.cdf(x), dist.sf(x));
    let mix: f64 = alpha.row(j).iter().zip(&blocks).map(|(a, b)| a * b).sum();
    Ok(design.n_subsets as f64 * fx * mix)
}

/// All `n` subset densities at `x`.
pub fn subset_pdfs(dist: &Distribution, design: &Design, alpha: &MisplacementMatrix, x: f64) -> Result<Vec<f64>> {
    check_alpha(design, alpha)?;
    let n = design.n_subsets;
    let fx = dist.pdf(x);
    if fx == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let blocks = block_probabilities(design, dist.cdf(x), dist.sf(x));
    Ok((0..n)
        .map(|j| {
            let mix: f64 = alpha.row(j).iter().zip(&blocks).map(|(a, b)| a * b).sum();
            n as f64 * fx * mix
        })
        .collect())
}

/// `(1/n) Σ_j f_[j](x) − f(x)`; zero up to rounding for any doubly
/// stochastic `alpha`.
pub fn mixture_identity_residual(
    dist: &Distribution,
    design: &Design,
    alpha: &MisplacementMatrix,
    x: f64,
) -> Result<f64> {
    let pdfs = subset_pdfs(dist, design, alpha, x)?;
    Ok(pdfs.iter().sum::<f64>() / design.n_subsets as f64 - dist.pdf(x))
}
