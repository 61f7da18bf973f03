//! EM-type estimation of a symmetric doubly stochastic misplacement matrix
//! from a PROS sample.
//!
//! The population cdf is replaced by the pooled ECDF, computed once and
//! clamped away from 0 and 1. Each iteration forms posterior block
//! probabilities
//!
//! ```text
//! π_i[h] ∝ α[j][h] · β̄_h(F̂(X_i)),   β̄_h(v) = (1/m) Σ_{u ∈ d_h} Beta(u, s-u+1) pdf at v
//! ```
//!
//! for an observation `X_i` from nominal subset `j`, accumulates
//! `w[j][h] = Σ_i π_i[h]`, and maximises `Σ w log α` over symmetric doubly
//! stochastic matrices.
//!
//! The M-step is solved through its dual. Stationarity gives
//! `α[j][j] = c_jj / λ_j` and `α[j][k] = c_jk / (λ_j + λ_k)` with
//! `c_jj = w_jj`, `c_jk = w_jk + w_kj`, where `λ` minimises the convex
//! function
//!
//! ```text
//! g(λ) = Σ_j λ_j − Σ_j c_jj ln λ_j − Σ_{j<k} c_jk ln(λ_j + λ_k)
//! ```
//!
//! whose gradient is one minus the row sums. Newton's method with
//! backtracking finds `λ`. A relative ridge of 1e-12 on every `c` keeps the
//! optimum interior; boundary solutions therefore come back as entries of
//! order 1e-12 instead of exact zeros.

use serde::{Deserialize, Serialize};

use crate::distributions::{block_probabilities, Design, MisplacementMatrix};
use crate::error::{Error, Result};
use crate::sampling::ProsSample;

pub const DEFAULT_MAX_ITERS: usize = 500;

const RIDGE: f64 = 1e-12;
const DUAL_TOL: f64 = 1e-13;
const DUAL_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "matrix")]
pub enum EmInit {
    /// Random subsetting, every entry `1/n`.
    Uniform,
    Supplied(MisplacementMatrix),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Stopping threshold on the upper-triangle SAE between iterates.
    pub delta: f64,
    pub max_iters: usize,
    /// ECDF clamp; `None` means `1/(2N)`.
    pub cdf_clamp_eps: Option<f64>,
    pub init: EmInit,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            delta: 1e-4,
            max_iters: DEFAULT_MAX_ITERS,
            cdf_clamp_eps: None,
            init: EmInit::Uniform,
        }
    }
}

impl EmConfig {
    pub fn with_delta(delta: f64) -> Self {
        EmConfig {
            delta,
            ..EmConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    /// Number of completed M-steps.
    pub iterations: usize,
    pub sae_history: Vec<f64>,
    /// `Q^(t)` evaluated at the previous and the new iterate.
    pub q_before: Vec<f64>,
    pub q_after: Vec<f64>,
    /// `α^(0), α^(1), …`, including the final matrix.
    pub iterates: Vec<MisplacementMatrix>,
    pub final_alpha: MisplacementMatrix,
    pub converged: bool,
    pub cdf_clamp_eps: f64,
}

/// Pooled ECDF `(1/N) #{X ≤ x}`.
pub fn empirical_cdf_pros(sample: &ProsSample, x: f64) -> f64 {
    let count = sample.observations().iter().filter(|o| o.value <= x).count();
    count as f64 / sample.len() as f64
}

/// ECDF at every observation, clamped to `[eps, 1 − eps]`, in observation order.
pub fn clamped_ecdf(sample: &ProsSample, eps: f64) -> Vec<f64> {
    let values = sample.values();
    let sorted = crate::stats::sorted_copy(&values);
    let n = values.len() as f64;
    values
        .iter()
        .map(|&v| {
            let count = sorted.partition_point(|&s| s <= v);
            (count as f64 / n).clamp(eps, 1.0 - eps)
        })
        .collect()
}

/// `β̄_h(v)` for every block `h`.
pub fn block_beta_means(design: &Design, v: f64) -> Vec<f64> {
    let n = design.n_subsets as f64;
    block_probabilities(design, v, 1.0 - v)
        .into_iter()
        .map(|p| n * p)
        .collect()
}

/// Posterior block probabilities, one row per observation (in the sample's
/// order). `fhat` holds the clamped ECDF at each observation.
pub fn posterior_weights(sample: &ProsSample, alpha: &MisplacementMatrix, fhat: &[f64]) -> Result<Vec<Vec<f64>>> {
    let design = sample.design();
    check_dims(design, alpha)?;
    if fhat.len() != sample.len() {
        return Err(Error::DesignMismatch(format!(
            "{} cdf values for {} observations",
            fhat.len(),
            sample.len()
        )));
    }
    let betas: Vec<Vec<f64>> = fhat.iter().map(|&v| block_beta_means(design, v)).collect();
    posterior_from_betas(sample, alpha, &betas)
}

fn posterior_from_betas(sample: &ProsSample, alpha: &MisplacementMatrix, betas: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    sample
        .observations()
        .iter()
        .zip(betas)
        .enumerate()
        .map(|(i, (obs, beta))| {
            let mut row: Vec<f64> = alpha.row(obs.subset).iter().zip(beta).map(|(a, b)| a * b).collect();
            let total: f64 = row.iter().sum();
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::NumericalDegeneracy {
                    index: i,
                    reason: format!("posterior normaliser is {total}"),
                });
            }
            for v in &mut row {
                *v /= total;
            }
            Ok(row)
        })
        .collect()
}

fn check_dims(design: &Design, alpha: &MisplacementMatrix) -> Result<()> {
    if alpha.dim() != design.n_subsets {
        return Err(Error::DesignMismatch(format!(
            "misplacement matrix is {0}×{0} but the design has n = {1} subsets",
            alpha.dim(),
            design.n_subsets
        )));
    }
    Ok(())
}

/// `Q(α) = Σ w log α`, with `0 · log 0 = 0`.
pub fn q_value(w: &[Vec<f64>], alpha: &MisplacementMatrix) -> f64 {
    let mut q = 0.0;
    for (j, row) in w.iter().enumerate() {
        for (h, &wv) in row.iter().enumerate() {
            if wv != 0.0 {
                q += wv * alpha.get(j, h).ln();
            }
        }
    }
    q
}

/// Symmetric doubly stochastic maximiser of `Σ w log α`.
pub fn m_step(w: &[Vec<f64>]) -> Result<MisplacementMatrix> {
    let n = w.len();
    if n == 0 || w.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParameter(
            "weight matrix must be square and nonempty".into(),
        ));
    }
    if w.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
    }
    let total: f64 = w.iter().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("weights are all zero".into()));
    }
    if n == 1 {
        return Ok(MisplacementMatrix::identity(1));
    }

    // Symmetrised, normalised weights with a small ridge.
    let mut c = vec![0.0; n * n];
    for j in 0..n {
        c[j * n + j] = w[j][j] / total + RIDGE;
        for k in j + 1..n {
            let v = (w[j][k] + w[k][j]) / total + RIDGE;
            c[j * n + k] = v;
            c[k * n + j] = v;
        }
    }

    let build = |lambda: &[f64]| {
        let mut a = vec![0.0; n * n];
        for j in 0..n {
            a[j * n + j] = c[j * n + j] / lambda[j];
            for k in j + 1..n {
                let v = c[j * n + k] / (lambda[j] + lambda[k]);
                a[j * n + k] = v;
                a[k * n + j] = v;
            }
        }
        a
    };
    let dual = |lambda: &[f64]| -> f64 {
        let mut g = 0.0;
        for j in 0..n {
            if !(lambda[j] > 0.0) {
                return f64::INFINITY;
            }
            g += lambda[j] - c[j * n + j] * lambda[j].ln();
            for k in j + 1..n {
                g -= c[j * n + k] * (lambda[j] + lambda[k]).ln();
            }
        }
        g
    };

    let mut lambda: Vec<f64> = (0..n)
        .map(|j| c[j * n + j] + 0.5 * (0..n).filter(|&k| k != j).map(|k| c[j * n + k]).sum::<f64>())
        .collect();
    let mut g_cur = dual(&lambda);
    let mut last_gmax = f64::INFINITY;

    for iter in 0..DUAL_MAX_ITERS {
        let a = build(&lambda);
        let grad: Vec<f64> = (0..n)
            .map(|j| 1.0 - a[j * n..(j + 1) * n].iter().sum::<f64>())
            .collect();
        if grad.iter().all(|g| g.abs() < DUAL_TOL) {
            return Ok(MisplacementMatrix::from_entries_unchecked(n, a));
        }
        let mut hess = vec![0.0; n * n];
        for j in 0..n {
            hess[j * n + j] = c[j * n + j] / (lambda[j] * lambda[j]);
            for k in 0..n {
                if k != j {
                    let t = c[j * n + k] / ((lambda[j] + lambda[k]) * (lambda[j] + lambda[k]));
                    hess[j * n + j] += t;
                    hess[j * n + k] = t;
                }
            }
        }
        let step = cholesky_solve(&hess, &grad, n).ok_or_else(|| Error::Solver {
            iterations: iter,
            last: Box::new(MisplacementMatrix::from_entries_unchecked(n, build(&lambda))),
        })?;
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        // Once the gradient is small the dual is flat to rounding, so plain
        // Newton steps (kept inside the domain) replace the Armijo search.
        let local = gmax < 1e-7;
        if local && gmax < 1e-11 && gmax >= last_gmax {
            return Ok(MisplacementMatrix::from_entries_unchecked(n, a));
        }
        last_gmax = gmax;
        let slope: f64 = -grad.iter().zip(&step).map(|(g, s)| g * s).sum::<f64>();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = lambda.iter().zip(&step).map(|(l, s)| l - t * s).collect();
            let g_trial = dual(&trial);
            if g_trial.is_finite() && (local || g_trial <= g_cur + 1e-4 * t * slope) {
                lambda = trial;
                g_cur = g_trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Solver {
                iterations: iter,
                last: Box::new(MisplacementMatrix::from_entries_unchecked(n, a)),
            });
        }
    }
    Err(Error::Solver {
        iterations: DUAL_MAX_ITERS,
        last: Box::new(MisplacementMatrix::from_entries_unchecked(n, build(&lambda))),
    })
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major `n×n`).
fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}

/// Runs the EM iteration until the upper-triangle SAE between successive
/// iterates is at most `delta`, or `max_iters` M-steps have been taken.
pub fn estimate_alpha(sample: &ProsSample, config: &EmConfig) -> Result<EmTrace> {
    let design = sample.design();
    let n = design.n_subsets;
    let big_n = sample.len();
    if !(config.delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be positive, got {}",
            config.delta
        )));
    }
    if config.max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be positive".into()));
    }
    let eps = config.cdf_clamp_eps.unwrap_or(0.5 / big_n as f64);
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidParameter(format!("cdf clamp {eps} outside (0, 0.5)")));
    }
    if n == 1 {
        let one = MisplacementMatrix::identity(1);
        return Ok(EmTrace {
            iterations: 0,
            sae_history: Vec::new(),
            q_before: Vec::new(),
            q_after: Vec::new(),
            iterates: vec![one.clone()],
            final_alpha: one,
            converged: true,
            cdf_clamp_eps: eps,
        });
    }

    let mut alpha = match &config.init {
        EmInit::Uniform => MisplacementMatrix::uniform(n),
        EmInit::Supplied(a) => {
            check_dims(design, a)?;
            if !a.is_symmetric(1e-9) {
                return Err(Error::InvalidParameter("initial matrix must be symmetric".into()));
            }
            a.clone()
        }
    };

    let fhat = clamped_ecdf(sample, eps);
    let betas: Vec<Vec<f64>> = fhat.iter().map(|&v| block_beta_means(design, v)).collect();

    let mut trace = EmTrace {
        iterations: 0,
        sae_history: Vec::new(),
        q_before: Vec::new(),
        q_after: Vec::new(),
        iterates: vec![alpha.clone()],
        final_alpha: alpha.clone(),
        converged: false,
        cdf_clamp_eps: eps,
    };

    for _ in 0..config.max_iters {
        let pi = posterior_from_betas(sample, &alpha, &betas)?;
        let mut w = vec![vec![0.0; n]; n];
        for (obs, row) in sample.observations().iter().zip(&pi) {
            for (h, p) in row.iter().enumerate() {
                w[obs.subset][h] += p;
            }
        }
        let next = m_step(&w)?;
        let sae = alpha.sae(&next);
        trace.q_before.push(q_value(&w, &alpha));
        trace.q_after.push(q_value(&w, &next));
        trace.sae_history.push(sae);
        trace.iterations += 1;
        trace.iterates.push(next.clone());
        alpha = next;
        if sae <= config.delta {
            trace.converged = true;
            break;
        }
    }
    trace.final_alpha = alpha;
    Ok(trace)
}
