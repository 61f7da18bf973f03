use thiserror::Error;

use crate::distributions::MisplacementMatrix;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("rank {rank} is outside 1..={set_size}")]
    RankDomain { rank: usize, set_size: usize },

    #[error("design mismatch: {0}")]
    DesignMismatch(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bandwidth must be positive and finite, got {0}")]
    Bandwidth(f64),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("sample structure: {0}")]
    Structure(String),

    #[error("probability {0} is outside the open interval (0, 1)")]
    ProbabilityDomain(f64),

    #[error("numerical degeneracy at observation {index}: {reason}")]
    NumericalDegeneracy { index: usize, reason: String },

    #[error("M-step solver did not converge after {iterations} iterations")]
    Solver {
        iterations: usize,
        last: Box<MisplacementMatrix>,
    },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("evaluation grid does not cover [{need_lo}, {need_hi}] (grid spans [{have_lo}, {have_hi}])")]
    Coverage {
        need_lo: f64,
        need_hi: f64,
        have_lo: f64,
        have_hi: f64,
    },

    #[error("{}", fmt_ingestion(*.line, .message))]
    Ingestion { line: Option<u64>, message: String },

    #[error("simulation failed: {aborted} of {total} replicates aborted (first error: {first})")]
    TooManyAborted {
        aborted: usize,
        total: usize,
        first: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_ingestion(line: Option<u64>, message: &str) -> String {
    match line {
        Some(l) => format!("ingestion error at line {l}: {message}"),
        None => format!("ingestion error: {message}"),
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::RankDomain { .. }
            | Error::DesignMismatch(_)
            | Error::InvalidDesign(_)
            | Error::InvalidParameter(_)
            | Error::Bandwidth(_)
            | Error::ProbabilityDomain(_) => ErrorCategory::Usage,
            Error::DegenerateSample(_)
            | Error::Structure(_)
            | Error::Ingestion { .. }
            | Error::Coverage { .. }
            | Error::Io(_)
            | Error::Json(_) => ErrorCategory::Data,
            Error::NumericalDegeneracy { .. }
            | Error::Solver { .. }
            | Error::Integration(_)
            | Error::TooManyAborted { .. } => ErrorCategory::Numerical,
        }
    }

    pub(crate) fn ingest(line: Option<u64>, message: impl Into<String>) -> Self {
        Error::Ingestion {
            line,
            message: message.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line());
        Error::Ingestion {
            line,
            message: err.to_string(),
        }
    }
}
