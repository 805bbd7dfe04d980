use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    /// The arrival rate cannot be carried by any admissible operating point.
    #[error("infeasible load: {0}")]
    InfeasibleLoad(String),

    #[error("scenario inconsistency: {0}")]
    ScenarioInconsistency(String),

    /// A caller broke a documented precondition (negative queue, negative power, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("arrival trace exhausted at slot {slot} (length {len})")]
    EndOfTrace { slot: usize, len: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{0}")]
    Validation(String),

    #[error("policy `{0}` has not been calibrated")]
    Uncalibrated(String),

    #[error("no convergence after {iterations} sweeps (last span {last_span:e})")]
    Divergence {
        iterations: usize,
        last_span: f64,
        span_trace: Vec<f64>,
    },

    #[error("config error at line {line}, key `{key}`: {msg}")]
    Config { key: String, line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}
