mod estimate;
mod simulate;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use pros_core::analysis::{default_p_grid, rrv_curve, Baseline};
use pros_core::em::estimate_alpha;
use pros_core::sampling::{draw_pros, draw_rss, draw_srs, format_float, synthesize_population};
use pros_core::simulation::replicate_rng;
use pros_core::{Design, DesignTag, EmConfig, EmInit, MisplacementMatrix, ProsSample};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{AlphaArgs, BaselineKind, Command, DesignKind, EmArgs, RrvArgs, SampleArgs, SynthesizeArgs};
use crate::error::usage;

pub type Result<T> = anyhow::Result<T>;

/// Random stream of a design inside one repetition; matches the simulation
/// module so single draws line up with replicate 0 of a study.
pub(crate) fn stream(kind: DesignKind) -> u64 {
    match kind {
        DesignKind::Srs => 0,
        DesignKind::Rss => 1,
        DesignKind::Pros => 2,
    }
}

/// Everything needed to reproduce a run: the full invocation plus values
/// resolved from it.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub invocation: Command,
    pub resolved: serde_json::Value,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut os = output.as_os_str().to_owned();
    os.push(".manifest.json");
    PathBuf::from(os)
}

/// Writes `bytes` to `path`, or to stdout when no path is given. A manifest
/// is written next to file outputs.
pub(crate) fn emit(path: Option<&Path>, bytes: &[u8], invocation: &Command, resolved: serde_json::Value) -> Result<()> {
    match path {
        Some(p) => {
            fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))?;
            let manifest = Manifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                invocation: invocation.clone(),
                resolved,
            };
            let mp = manifest_path(p);
            let mut text = serde_json::to_string_pretty(&manifest)?;
            text.push('\n');
            fs::write(&mp, text).with_context(|| format!("writing {}", mp.display()))?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(bytes).and_then(|()| out.flush()) {
                // A closed reader (`| head`) is not a failure.
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                r => r?,
            }
        }
    }
    Ok(())
}

pub(crate) fn write_side_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Parses a misplacement-matrix source for an `n`-subset design.
pub(crate) fn parse_alpha_spec(spec: &str, n: usize) -> Result<MisplacementMatrix> {
    let lower = spec.trim().to_ascii_lowercase();
    let matrix = match lower.as_str() {
        "identity" | "perfect" => MisplacementMatrix::identity(n),
        "uniform" | "random" => MisplacementMatrix::uniform(n),
        _ => {
            if let Some(v) = lower.strip_prefix("alpha0:") {
                let a0: f64 = v.parse().map_err(|_| usage(format!("bad alpha0 value {v:?}")))?;
                MisplacementMatrix::alpha0_family(n, a0)?
            } else {
                read_matrix_file(Path::new(spec.trim()))?
            }
        }
    };
    if matrix.dim() != n {
        return Err(usage(format!(
            "misplacement matrix is {0}×{0} but n = {n}",
            matrix.dim()
        )));
    }
    Ok(matrix)
}

fn read_matrix_file(path: &Path) -> Result<MisplacementMatrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading matrix file {}", path.display()))?;
    let rows: Vec<Vec<f64>> = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| anyhow::anyhow!("{}:{line}: {e}", path.display()))?;
            rows.push(row);
        }
        rows
    };
    Ok(MisplacementMatrix::from_rows(rows)?)
}

/// Resolves `--alpha`/`--alpha0`, defaulting to perfect subsetting.
pub(crate) fn resolve_alpha(args: &AlphaArgs, n: usize) -> Result<(MisplacementMatrix, String)> {
    match (&args.alpha, args.alpha0) {
        (Some(spec), _) => Ok((parse_alpha_spec(spec, n)?, spec.clone())),
        (None, Some(a0)) => Ok((MisplacementMatrix::alpha0_family(n, a0)?, format!("alpha0:{a0}"))),
        (None, None) => Ok((MisplacementMatrix::identity(n), "identity".into())),
    }
}

pub fn execute(command: Command) -> Result<()> {
    match &command {
        Command::Sample(a) => cmd_sample(a, &command),
        Command::Estimate(a) => estimate::run(a, &command),
        Command::Em(a) => cmd_em(a, &command),
        Command::Rrv(a) => cmd_rrv(a, &command),
        Command::Simulate(a) => simulate::run(a, &command),
        Command::SynthesizePopulation(a) => cmd_synthesize(a, &command),
        Command::Run(a) => {
            let mut inner = load_config(&a.config)?;
            if let Some(out) = &a.output {
                redirect_output(&mut inner, out.clone());
            }
            execute(inner)
        }
    }
}

/// Reads a manifest (using its `invocation`) or a bare command table.
pub fn load_config(path: &Path) -> Result<Command> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: serde_json::Value = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
        let t: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        serde_json::to_value(t)?
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    let value = match value.get("invocation") {
        Some(inv) => inv.clone(),
        None => value,
    };
    let command: Command =
        serde_json::from_value(value).with_context(|| format!("{} does not describe a command", path.display()))?;
    if matches!(command, Command::Run(_)) {
        return Err(usage("a config file cannot itself invoke `run`"));
    }
    Ok(command)
}

fn redirect_output(command: &mut Command, out: PathBuf) {
    match command {
        Command::Sample(a) => a.output = Some(out),
        Command::Estimate(a) => a.output = Some(out),
        Command::Em(a) => a.output = Some(out),
        Command::Rrv(a) => a.output = Some(out),
        Command::Simulate(a) => {
            a.output = Some(out);
            a.csv = None;
        }
        Command::SynthesizePopulation(a) => a.output = Some(out),
        Command::Run(a) => a.output = Some(out),
    }
}

fn cmd_sample(a: &SampleArgs, command: &Command) -> Result<()> {
    let design = a.design.design()?;
    let n = design.n_subsets;
    let (alpha, source) = resolve_alpha(&a.alpha, n)?;
    let mut rng = replicate_rng(a.seed, 0, stream(a.kind));
    let sample = match a.kind {
        DesignKind::Pros => draw_pros(&a.dist, &design, &alpha, &mut rng)?,
        DesignKind::Rss => {
            if design.subset_size != 1 {
                return Err(usage("an RSS sample has subset size m = 1"));
            }
            draw_rss(&a.dist, n, design.cycles, &alpha, &mut rng)?
        }
        DesignKind::Srs => ProsSample::from_srs(&draw_srs(&a.dist, design.sample_size(), &mut rng)?)?,
    };
    let mut buf = Vec::new();
    sample.write_csv(&mut buf)?;
    let resolved = json!({
        "design": sample.design(),
        "set_size": design.set_size(),
        "sample_size": sample.len(),
        "alpha_source": source,
        "alpha": alpha,
        "rng": "chacha8",
        "stream": stream(a.kind),
    });
    emit(a.output.as_deref(), &buf, command, resolved)
}

fn cmd_em(a: &EmArgs, command: &Command) -> Result<()> {
    let file = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let sample = ProsSample::read_csv(file, a.m, DesignTag::Pros)?.scaled(a.scale);
    let design: Design = *sample.design();
    if let Some(n) = a.n {
        if n != design.n_subsets {
            return Err(usage(format!(
                "--n {n} but the sample has {} subsets",
                design.n_subsets
            )));
        }
    }
    let init = match &a.init {
        Some(spec) => EmInit::Supplied(parse_alpha_spec(spec, design.n_subsets)?),
        None => EmInit::Uniform,
    };
    let config = EmConfig {
        delta: a.delta,
        max_iters: a.max_iters,
        cdf_clamp_eps: a.cdf_eps,
        init,
    };
    let trace = estimate_alpha(&sample, &config)?;
    if !trace.converged {
        log::warn!(
            "EM stopped after {} iterations without reaching delta = {}",
            trace.iterations,
            a.delta
        );
    }
    let report = json!({
        "design": design,
        "alpha": trace.final_alpha,
        "converged": trace.converged,
        "iterations": trace.iterations,
        "cdf_clamp_eps": trace.cdf_clamp_eps,
        "sae_history": trace.sae_history,
        "q_before": trace.q_before,
        "q_after": trace.q_after,
        "iterates": trace.iterates,
    });
    let resolved = json!({ "design": design, "em": config, "sample_size": sample.len() });
    emit(a.output.as_deref(), &json_bytes(&report)?, command, resolved)
}

fn cmd_rrv(a: &RrvArgs, command: &Command) -> Result<()> {
    let design = Design::new(a.n, a.m, 1)?;
    let (alpha, source) = resolve_alpha(&a.alpha, a.n)?;
    let baseline = match a.baseline {
        BaselineKind::Srs => Baseline::Srs,
        BaselineKind::Rss => Baseline::Rss(match &a.rss_error {
            Some(spec) => parse_alpha_spec(spec, a.n)?,
            None => alpha.clone(),
        }),
    };
    let grid = match a.points {
        Some(0) => return Err(usage("--points must be positive")),
        Some(k) => (1..=k).map(|i| i as f64 / (k + 1) as f64).collect(),
        None => default_p_grid(),
    };
    let curve = rrv_curve(&design, &alpha, baseline.clone(), &grid)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["p", "rrv"])?;
    for (p, r) in curve.p_grid.iter().zip(&curve.rrv) {
        w.write_record([format_float(*p), format_float(*r)])?;
    }
    let buf = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    let resolved = json!({
        "design": design,
        "alpha_source": source,
        "alpha": alpha,
        "baseline": baseline,
    });
    emit(a.output.as_deref(), &buf, command, resolved)
}

fn cmd_synthesize(a: &SynthesizeArgs, command: &Command) -> Result<()> {
    let mut rng = replicate_rng(a.seed, 0, 0);
    let pop = synthesize_population(a.size, a.rho, &mut rng)?;
    let mut buf = Vec::new();
    pop.write_csv(&mut buf)?;
    let resolved = json!({ "columns": ["y", "x"], "rng": "chacha8" });
    emit(a.output.as_deref(), &buf, command, resolved)
}
