//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A physical quantity or argument is outside its valid domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Positive building load with zero chilled-water flow.
    #[error("no-flow under load: building load {load_kw} kW with total on-flow {flow_kgs} kg/s")]
    NoFlowUnderLoad { load_kw: f64, flow_kgs: f64 },

    /// Least-squares fit could not be performed.
    #[error("fit error: {0}")]
    Fit(String),

    /// A caller broke an API contract (layout mismatch, step after done, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Configuration file or schema problem.
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite intermediates or numerical breakdown.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidInput(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        CoreError::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CoreError::Numeric(msg.into())
    }
}
