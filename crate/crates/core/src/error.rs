use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid network: {0}")]
    Network(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e})")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("market error: {0}")]
    Market(String),

    #[error("deadline constraint violated for customer {customer} at t={t} (unserved {unserved:.6} kWh)")]
    DeadlineViolated { customer: u64, t: usize, unserved: f64 },

    #[error("RES oversubscribed at t={t}: matched {matched:.6} kWh of {available:.6} kWh")]
    ResOversubscribed { t: usize, matched: f64, available: f64 },

    #[error("customer {customer} over-served: matched {matched:.6} kWh of {remaining:.6} kWh")]
    OverServed {
        customer: u64,
        matched: f64,
        remaining: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
