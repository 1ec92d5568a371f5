//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A model definition failed validation; each string describes one
    /// violated constraint.
    #[error("invalid model: {}", .0.join("; "))]
    InvalidModel(Vec<String>),

    /// Dimension or layout mismatch between arguments.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Input values violate a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An iterative solver did not reach its tolerance.
    #[error("no convergence in {what}: {detail}")]
    NonConvergence { what: &'static str, detail: String },

    /// An event or iteration budget was exhausted before the goal.
    #[error("budget exhausted in {what} after {spent} steps")]
    BudgetExhausted { what: &'static str, spent: u64 },

    /// Exhaustive enumeration refused: instance too large.
    #[error("size limit: {0}")]
    SizeLimit(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
