use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pros_core::{BandwidthSpec, Design, Distribution, Kernel};
use serde::{Deserialize, Serialize};

use crate::error::usage;

#[derive(Debug, Parser)]
#[command(
    name = "pros",
    version,
    about = "Kernel density estimation from partially rank-ordered set samples"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Log filter, e.g. `warn`, `info`, `pros_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Draw an SRS, RSS or PROS sample from a parametric population.
    Sample(SampleArgs),
    /// Averaged density estimates with confidence bands for SRS, RSS and PROS.
    Estimate(EstimateArgs),
    /// Estimate the misplacement matrix of a PROS sample by EM.
    Em(EmArgs),
    /// Reduction-in-variance curve over p = F(x).
    Rrv(RrvArgs),
    /// Monte Carlo efficiency studies.
    Simulate(SimulateArgs),
    /// Generate a bivariate (y, x) population with a target correlation.
    SynthesizePopulation(SynthesizeArgs),
    /// Re-run a command from a manifest or a JSON/TOML config file.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, Args, Serialize, Deserialize)]
pub struct DesignArgs {
    /// Number of subsets per set.
    #[arg(long)]
    pub n: usize,
    /// Subset size.
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    /// Number of cycles.
    #[arg(long = "L", value_name = "L", default_value_t = 1)]
    pub cycles: usize,
    /// Set size; must equal n·m when given.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
}

impl DesignArgs {
    pub fn design(&self) -> anyhow::Result<Design> {
        if let Some(s) = self.s {
            if s != self.n * self.m {
                return Err(usage(format!(
                    "set size s = {s} differs from n·m = {}",
                    self.n * self.m
                )));
            }
        }
        Ok(Design::new(self.n, self.m, self.cycles)?)
    }
}

/// Misplacement matrix source: `identity`, `uniform`, `alpha0:<v>`, or a
/// JSON (`[[..],..]`) or CSV file of rows.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct AlphaArgs {
    #[arg(long, conflicts_with = "alpha0")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<String>,
    /// Diagonal of the exchangeable misplacement family.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Srs,
    Rss,
    Pros,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub design: DesignArgs,
    #[arg(long, default_value = "normal")]
    pub dist: Distribution,
    #[command(flatten)]
    #[serde(flatten)]
    pub alpha: AlphaArgs,
    /// Sampling design; `rss` uses set size n, `srs` draws n·L values.
    #[arg(long = "design", value_enum, default_value = "pros")]
    pub kind: DesignKind,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub design: DesignArgs,
    /// Population CSV with y and x columns; ranking uses x.
    #[arg(long, conflicts_with = "dist")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub y_col: String,
    #[arg(long, default_value = "x")]
    pub x_col: String,
    /// Parametric population, used when no population file is given.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<Distribution>,
    /// Multiplier applied to y at ingestion.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub alpha: AlphaArgs,
    /// Number of repetitions averaged.
    #[arg(long = "M", visible_alias = "reps", value_name = "M", default_value_t = 20)]
    pub reps: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["srs", "rss", "pros"])]
    pub designs: Vec<DesignKind>,
    /// `epanechnikov_unit` (unit variance), `epanechnikov` or `gaussian`.
    #[arg(long, default_value = "epanechnikov_unit")]
    pub kernel: Kernel,
    /// `silverman` or a fixed positive bandwidth.
    #[arg(long, default_value = "silverman")]
    pub bandwidth: BandwidthSpec,
    #[arg(long, default_value_t = 512)]
    pub grid_points: usize,
    /// Two-sided level of the pointwise bands.
    #[arg(long, default_value_t = 0.05)]
    pub nu: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EmArgs {
    /// Sample CSV with value, subset and cycle columns.
    #[arg(long)]
    pub input: PathBuf,
    /// Expected number of subsets; checked against the file.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Subset size.
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub delta: f64,
    #[arg(long, default_value_t = pros_core::em::DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    /// ECDF clamp; defaults to 1/(2N).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cdf_eps: Option<f64>,
    /// Starting matrix in the `--alpha` syntax; uniform when absent.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Output JSON; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Srs,
    Rss,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RrvArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub alpha: AlphaArgs,
    #[arg(long, value_enum, default_value = "srs")]
    pub baseline: BaselineKind,
    /// Ranking-error matrix of the RSS baseline, in the `--alpha` syntax;
    /// defaults to the misplacement matrix.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rss_error: Option<String>,
    /// Number of equally spaced interior p values; 0.01..0.99 when absent.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Mise,
    Symmetry,
    Recovery,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "mise")]
    pub study: Study,
    /// Run the full MISE, symmetry and recovery grids.
    #[arg(long)]
    pub paper_tables: bool,
    #[arg(long, default_value = "normal")]
    pub dist: Distribution,
    #[arg(long, default_value_t = 6)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long = "L", value_name = "L", default_value_t = 4)]
    pub cycles: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub alpha: AlphaArgs,
    /// Recovery study matrix 1, 2 or 3 (n = 3); overrides `--alpha`.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<usize>,
    /// Replicates (MISE and symmetry) or runs (recovery); 5000 and 100 by default.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub delta: f64,
    /// `epanechnikov_unit` (unit variance), `epanechnikov` or `gaussian`.
    #[arg(long, default_value = "epanechnikov_unit")]
    pub kernel: Kernel,
    #[arg(long, default_value = "silverman")]
    pub bandwidth: BandwidthSpec,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
    /// Include wall-clock runtimes in the report.
    #[arg(long)]
    pub timing: bool,
    /// JSON report; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Table rows as CSV. With `--paper-tables` this is a prefix for
    /// `<prefix>.mise.csv`, `<prefix>.symmetry.csv` and `<prefix>.recovery.csv`.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthesizeArgs {
    #[arg(long, default_value_t = 1000)]
    pub size: usize,
    /// Correlation between y and x.
    #[arg(long, default_value_t = 0.786)]
    pub rho: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RunArgs {
    /// Manifest or config file (`.json` or `.toml`).
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces the primary output path; secondary outputs are dropped.
    #[arg(long)]
    pub output: Option<PathBuf>,
}
