//! Error taxonomy shared by every module.
//!
//! Errors fall into three broad classes that the CLI maps onto exit codes:
//! input problems (unreadable or malformed files), data-contract violations
//! (valid files whose contents break an invariant), and numeric failures
//! (divergence, singular systems, undefined metrics).

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at row {row}, column {col}: {msg}")]
    Parse {
        path: String,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("json error in {path}: {msg}")]
    Json { path: String, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("imputation error for series '{series}': phase {phase} has no observed values")]
    Imputation { series: String, phase: usize },

    #[error("split error for series '{series}': length {len} must exceed horizon {horizon}")]
    Split {
        series: String,
        len: usize,
        horizon: usize,
    },

    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("shape error in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("contract error: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training error at epoch {epoch}, step {step}: {msg}")]
    Training {
        epoch: usize,
        step: usize,
        msg: String,
    },

    #[error("tuning error: {0}")]
    Tuning(String),
}

impl Error {
    /// Exit code the CLI reports for this error: 2 for input problems,
    /// 3 for data-contract violations, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Parse { .. } | Error::Json { .. } => 2,
            Error::Validation(_)
            | Error::Imputation { .. }
            | Error::Split { .. }
            | Error::Sizing(_)
            | Error::Shape { .. }
            | Error::Contract(_)
            | Error::Domain(_)
            | Error::UndefinedMetric(_) => 3,
            Error::Numeric(_) | Error::Training { .. } | Error::Tuning(_) => 4,
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}
