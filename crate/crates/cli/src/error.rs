use pros_core::ErrorCategory;
use serde::Serialize;

/// Inconsistent or invalid command-line input detected by the front end.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub category: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl ErrorReport {
    pub fn usage(message: String) -> Self {
        ErrorReport {
            category: "usage",
            exit_code: 2,
            message,
        }
    }

    pub fn from_anyhow(err: &anyhow::Error) -> Self {
        let category = if err.downcast_ref::<UsageError>().is_some() {
            ErrorCategory::Usage
        } else if let Some(e) = err.downcast_ref::<pros_core::Error>() {
            e.category()
        } else {
            // I/O, CSV and config parsing failures are problems with the inputs.
            ErrorCategory::Data
        };
        let (category, exit_code) = match category {
            ErrorCategory::Usage => ("usage", 2),
            ErrorCategory::Data => ("data", 3),
            ErrorCategory::Numerical => ("numerical", 4),
        };
        ErrorReport {
            category,
            exit_code,
            message: format!("{err:#}"),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}
