//! Monte Carlo studies and their table rows.

use std::path::{Path, PathBuf};

use pros_core::sampling::format_float;
use pros_core::simulation::{
    mise_table_protocols, recovery_matrices, recovery_table_protocols, run_alpha_recovery, run_mise_study,
    run_symmetry_study, symmetry_table_protocols, AlphaRecoveryProtocol, AlphaRecoveryReport, MiseProtocol,
    Parallelism, SimulationReport, SymmetryProtocol, SymmetryReport,
};
use pros_core::{Design, EmConfig};
use serde_json::json;

use super::{emit, json_bytes, resolve_alpha, write_side_file, Result};
use crate::args::{Command, SimulateArgs, Study};
use crate::error::usage;

const DEFAULT_REPLICATES: usize = 5000;
const DEFAULT_RUNS: usize = 100;

pub(super) fn run(a: &SimulateArgs, command: &Command) -> Result<()> {
    let par = Parallelism { threads: a.threads };
    if a.replicates == Some(0) {
        return Err(usage("--replicates must be positive"));
    }
    if a.paper_tables {
        return run_tables(a, par, command);
    }
    let design = Design::new(a.n, a.m, a.cycles)?;
    let (report, csv) = match a.study {
        Study::Mise => {
            let (alpha, _) = match (&a.alpha.alpha, a.alpha.alpha0) {
                (None, None) => resolve_alpha(
                    &crate::args::AlphaArgs {
                        alpha: None,
                        alpha0: Some(1.0),
                    },
                    a.n,
                )?,
                _ => resolve_alpha(&a.alpha, a.n)?,
            };
            let protocol = MiseProtocol {
                dist: a.dist,
                design,
                rss_error: alpha.clone(),
                alpha,
                replicates: a.replicates.unwrap_or(DEFAULT_REPLICATES),
                kernel: a.kernel,
                bandwidth: a.bandwidth,
                seed: a.seed,
            };
            let mut r = run_mise_study(&protocol, par)?;
            if !a.timing {
                r.runtime_secs = None;
            }
            let csv = mise_csv(std::slice::from_ref(&r))?;
            (serde_json::to_value(r)?, csv)
        }
        Study::Symmetry => {
            let protocol = SymmetryProtocol {
                dist: a.dist,
                design,
                replicates: a.replicates.unwrap_or(DEFAULT_REPLICATES),
                kernel: a.kernel,
                bandwidth: a.bandwidth,
                seed: a.seed,
            };
            let mut r = run_symmetry_study(&protocol, par)?;
            if !a.timing {
                r.runtime_secs = None;
            }
            let csv = symmetry_csv(std::slice::from_ref(&r))?;
            (serde_json::to_value(r)?, csv)
        }
        Study::Recovery => {
            let true_alpha = match a.matrix {
                Some(k @ 1..=3) => {
                    if a.n != 3 {
                        return Err(usage("--matrix selects a 3×3 matrix; use --n 3"));
                    }
                    recovery_matrices()[k - 1].clone()
                }
                Some(k) => return Err(usage(format!("--matrix must be 1, 2 or 3, got {k}"))),
                None => resolve_alpha(&a.alpha, a.n)?.0,
            };
            let protocol = AlphaRecoveryProtocol {
                dist: a.dist,
                design,
                true_alpha,
                runs: a.replicates.unwrap_or(DEFAULT_RUNS),
                em: EmConfig::with_delta(a.delta),
                seed: a.seed,
            };
            let mut r = run_alpha_recovery(&protocol, par)?;
            if !a.timing {
                r.runtime_secs = None;
            }
            let csv = recovery_csv(std::slice::from_ref(&r))?;
            (serde_json::to_value(r)?, csv)
        }
    };
    if let Some(path) = &a.csv {
        write_side_file(path, &csv)?;
    }
    let resolved = json!({ "design": design, "rng": "chacha8, one stream per replicate and design" });
    emit(a.output.as_deref(), &json_bytes(&report)?, command, resolved)
}

fn run_tables(a: &SimulateArgs, par: Parallelism, command: &Command) -> Result<()> {
    let reps = a.replicates.unwrap_or(DEFAULT_REPLICATES);
    let runs = a.replicates.unwrap_or(DEFAULT_RUNS);
    let mut mise = Vec::new();
    for p in mise_table_protocols(reps, a.seed) {
        log::info!(
            "mise: {} n={} L={} α₀={}",
            p.dist,
            p.design.n_subsets,
            p.design.cycles,
            p.alpha.get(0, 0)
        );
        let mut r = run_mise_study(&p, par)?;
        if !a.timing {
            r.runtime_secs = None;
        }
        mise.push(r);
    }
    let mut symmetry = Vec::new();
    for p in symmetry_table_protocols(reps, a.seed) {
        log::info!("symmetry: {} n={} L={}", p.dist, p.design.n_subsets, p.design.cycles);
        let mut r = run_symmetry_study(&p, par)?;
        if !a.timing {
            r.runtime_secs = None;
        }
        symmetry.push(r);
    }
    let mut recovery = Vec::new();
    for p in recovery_table_protocols(runs, a.delta, a.seed) {
        log::info!("recovery: {} L={}", p.dist, p.design.cycles);
        let mut r = run_alpha_recovery(&p, par)?;
        if !a.timing {
            r.runtime_secs = None;
        }
        recovery.push(r);
    }
    if let Some(prefix) = &a.csv {
        write_side_file(&with_suffix(prefix, "mise.csv"), &mise_csv(&mise)?)?;
        write_side_file(&with_suffix(prefix, "symmetry.csv"), &symmetry_csv(&symmetry)?)?;
        write_side_file(&with_suffix(prefix, "recovery.csv"), &recovery_csv(&recovery)?)?;
    }
    let report = json!({ "mise": mise, "symmetry": symmetry, "recovery": recovery });
    let resolved =
        json!({ "replicates": reps, "runs": runs, "protocols": mise.len() + symmetry.len() + recovery.len() });
    emit(a.output.as_deref(), &json_bytes(&report)?, command, resolved)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut os = prefix.as_os_str().to_owned();
    os.push(".");
    os.push(suffix);
    PathBuf::from(os)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))
}

fn f(v: f64) -> String {
    format_float(v)
}

/// One row per protocol: population, n, L, α₀, RP and SP with errors, MISEs.
fn mise_csv(reports: &[SimulationReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dist",
        "n",
        "m",
        "L",
        "alpha0",
        "rp",
        "rp_se",
        "sp",
        "sp_se",
        "mise_srs",
        "mise_rss",
        "mise_pros",
        "completed",
        "aborted",
    ])?;
    for r in reports {
        let p = &r.protocol;
        w.write_record([
            p.dist.to_string(),
            p.design.n_subsets.to_string(),
            p.design.subset_size.to_string(),
            p.design.cycles.to_string(),
            f(p.alpha.get(0, 0)),
            f(r.rp.mean),
            f(r.rp.se),
            f(r.sp.mean),
            f(r.sp.se),
            f(r.mise_srs.mean),
            f(r.mise_rss.mean),
            f(r.mise_pros.mean),
            r.completed.to_string(),
            r.aborted.to_string(),
        ])?;
    }
    finish(w)
}

/// Efficiencies of the mean, median, Hodges–Lehmann, cycle-median and
/// known-centre variants, each with its standard error.
fn symmetry_csv(reports: &[SymmetryReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dist",
        "n",
        "m",
        "L",
        "mu1",
        "mu1_se",
        "mu2",
        "mu2_se",
        "mu3",
        "mu3_se",
        "mu4",
        "mu4_se",
        "known",
        "known_se",
        "mise_pros",
    ])?;
    for r in reports {
        let p = &r.protocol;
        let mut row = vec![
            p.dist.to_string(),
            p.design.n_subsets.to_string(),
            p.design.subset_size.to_string(),
            p.design.cycles.to_string(),
        ];
        for e in &r.efficiency {
            row.push(f(e.mean));
            row.push(f(e.se));
        }
        row.push(f(r.mise_pros.mean));
        w.write_record(&row)?;
    }
    finish(w)
}

/// Upper-triangle means and standard deviations of the recovered matrix.
fn recovery_csv(reports: &[AlphaRecoveryReport]) -> Result<Vec<u8>> {
    let n = reports.first().map_or(0, |r| r.protocol.design.n_subsets);
    let mut header = vec!["dist".to_string(), "matrix".into(), "L".into()];
    for j in 0..n {
        for h in j..n {
            header.push(format!("a{}{}", j + 1, h + 1));
            header.push(format!("a{}{}_sd", j + 1, h + 1));
        }
    }
    header.extend(["converged".into(), "nonconverged".into(), "mean_iterations".into()]);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    let known = recovery_matrices();
    for r in reports {
        let p = &r.protocol;
        let label = known
            .iter()
            .position(|k| *k == p.true_alpha)
            .map_or_else(|| "custom".to_string(), |i| format!("alpha{}", i + 1));
        let mut row = vec![p.dist.to_string(), label, p.design.cycles.to_string()];
        let n = p.design.n_subsets;
        for j in 0..n {
            for h in j..n {
                row.push(f(r.mean[j][h]));
                row.push(f(r.sd[j][h]));
            }
        }
        row.push(r.converged_runs.to_string());
        row.push(r.nonconverged_runs.to_string());
        row.push(f(r.mean_iterations));
        w.write_record(&row)?;
    }
    finish(w)
}
