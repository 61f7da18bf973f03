//! Repeated sampling and estimation, averaged over repetitions.

use std::fs;

use anyhow::Context;
use pros_core::kde::{bandwidth_silverman, default_grid, estimate_with_ci};
use pros_core::sampling::{draw_pros, draw_pros_finite, draw_rss, draw_srs, draw_srs_finite, format_float};
use pros_core::simulation::{replicate_rng, ReplicateRng};
use pros_core::stats::standard_normal_quantile;
use pros_core::{Design, Distribution, FinitePopulation, GridSpec, MisplacementMatrix, ProsSample};
use serde_json::json;

use super::{emit, resolve_alpha, stream, Result};
use crate::args::{Command, DesignKind, EstimateArgs};
use crate::error::usage;

enum Population {
    Finite(FinitePopulation),
    Parametric(Distribution, MisplacementMatrix),
}

struct Averaged {
    kind: DesignKind,
    f: Vec<f64>,
    var: Vec<f64>,
    mean_bandwidth: f64,
    clamped_points: usize,
}

fn draw(pop: &Population, kind: DesignKind, design: &Design, scale: f64, rng: &mut ReplicateRng) -> Result<ProsSample> {
    let n = design.n_subsets;
    let sample = match (pop, kind) {
        (Population::Finite(p), DesignKind::Srs) => {
            ProsSample::from_srs(&draw_srs_finite(p, design.sample_size(), rng)?)?
        }
        (Population::Finite(p), DesignKind::Rss) => draw_pros_finite(p, &Design::new(n, 1, design.cycles)?, rng)?,
        (Population::Finite(p), DesignKind::Pros) => draw_pros_finite(p, design, rng)?,
        (Population::Parametric(d, _), DesignKind::Srs) => {
            ProsSample::from_srs(&draw_srs(d, design.sample_size(), rng)?)?
        }
        (Population::Parametric(d, a), DesignKind::Rss) => draw_rss(d, n, design.cycles, a, rng)?,
        (Population::Parametric(d, a), DesignKind::Pros) => draw_pros(d, design, a, rng)?,
    };
    // Finite populations are scaled once at ingestion.
    Ok(match pop {
        Population::Finite(_) => sample,
        Population::Parametric(..) => sample.scaled(scale),
    })
}

pub(super) fn run(a: &EstimateArgs, command: &Command) -> Result<()> {
    let design = a.design.design()?;
    if a.reps == 0 {
        return Err(usage("--M must be positive"));
    }
    if a.grid_points < 2 {
        return Err(usage("--grid-points must be at least 2"));
    }
    if a.designs.is_empty() {
        return Err(usage("--designs is empty"));
    }
    if !(a.scale > 0.0 && a.scale.is_finite()) {
        return Err(usage("--scale must be positive"));
    }
    let (pop, alpha_source, reference) = match (&a.population, &a.dist) {
        (Some(path), _) => {
            let file = fs::File::open(path).with_context(|| format!("opening population {}", path.display()))?;
            let pop = FinitePopulation::read_csv(file, &a.y_col, &a.x_col)?.scale_y(a.scale);
            if a.alpha.alpha.is_some() || a.alpha.alpha0.is_some() {
                log::warn!(
                    "misplacement options are ignored for a population file; ranking uses {:?}",
                    a.x_col
                );
            }
            let reference = pop.y_values();
            (
                Population::Finite(pop),
                format!("ranking by column {:?}", a.x_col),
                reference,
            )
        }
        (None, Some(dist)) => {
            let (alpha, source) = resolve_alpha(&a.alpha, design.n_subsets)?;
            // Quantiles standing in for the population when placing the grid.
            let reference: Vec<f64> = (0..1000)
                .map(|i| a.scale * dist.quantile((i as f64 + 0.5) / 1000.0))
                .collect();
            (Population::Parametric(*dist, alpha), source, reference)
        }
        (None, None) => return Err(usage("give either --population or --dist")),
    };
    let h_ref = bandwidth_silverman(&reference)?;
    let grid = default_grid(&reference, a.kernel, h_ref, a.grid_points);
    let grid_spec = GridSpec::Points(grid.clone());

    let mut results = Vec::with_capacity(a.designs.len());
    for &kind in &a.designs {
        let mut f = vec![0.0; grid.len()];
        let mut var = vec![0.0; grid.len()];
        let mut h_sum = 0.0;
        let mut clamped_points = 0;
        for r in 0..a.reps {
            let mut rng = replicate_rng(a.seed, r, stream(kind));
            let sample = draw(&pop, kind, &design, a.scale, &mut rng)?;
            let est = estimate_with_ci(&sample, a.kernel, a.bandwidth, &grid_spec, None)?;
            h_sum += est.bandwidth_used;
            for (acc, v) in f.iter_mut().zip(&est.f_hat) {
                *acc += v;
            }
            for (acc, v) in var.iter_mut().zip(est.var_hat.as_deref().unwrap_or_default()) {
                *acc += v;
            }
            clamped_points += est
                .clamped
                .as_deref()
                .unwrap_or_default()
                .iter()
                .filter(|&&c| c)
                .count();
        }
        let m = a.reps as f64;
        f.iter_mut().for_each(|v| *v /= m);
        var.iter_mut().for_each(|v| *v /= m);
        results.push(Averaged {
            kind,
            f,
            var,
            mean_bandwidth: h_sum / m,
            clamped_points,
        });
    }

    let z = standard_normal_quantile(1.0 - 0.5 * a.nu);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["x".to_string()];
    for r in &results {
        let tag = kind_name(r.kind);
        header.extend(["f", "var", "ci_lo", "ci_hi"].iter().map(|c| format!("{c}_{tag}")));
    }
    w.write_record(&header)?;
    for (i, x) in grid.iter().enumerate() {
        let mut row = vec![format_float(*x)];
        for r in &results {
            let half = z * r.var[i].sqrt();
            row.push(format_float(r.f[i]));
            row.push(format_float(r.var[i]));
            row.push(format_float((r.f[i] - half).max(0.0)));
            row.push(format_float(r.f[i] + half));
        }
        w.write_record(&row)?;
    }
    let buf = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;

    let per_design: serde_json::Map<String, serde_json::Value> = results
        .iter()
        .map(|r| {
            (
                kind_name(r.kind).to_string(),
                json!({ "mean_bandwidth": r.mean_bandwidth, "clamped_variance_points": r.clamped_points }),
            )
        })
        .collect();
    let alpha_json = match &pop {
        Population::Parametric(_, alpha) => serde_json::to_value(alpha)?,
        Population::Finite(_) => serde_json::Value::Null,
    };
    let resolved = json!({
        "design": design,
        "set_size": design.set_size(),
        "alpha_source": alpha_source,
        "alpha": alpha_json,
        "bandwidth": a.bandwidth,
        "seed": a.seed,
        "repetitions": a.reps,
        "z": z,
        "grid": { "lo": grid[0], "hi": grid[grid.len() - 1], "points": grid.len(), "reference_bandwidth": h_ref },
        "designs": per_design,
    });
    emit(a.output.as_deref(), &buf, command, resolved)
}

fn kind_name(kind: DesignKind) -> &'static str {
    match kind {
        DesignKind::Srs => "srs",
        DesignKind::Rss => "rss",
        DesignKind::Pros => "pros",
    }
}
