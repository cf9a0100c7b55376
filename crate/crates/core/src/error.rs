use thiserror::Error;

use crate::signal::Unit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unit mismatch in {op}: expected {expected:?}, got {got:?}")]
    UnitMismatch {
        op: &'static str,
        expected: Unit,
        got: Unit,
    },

    #[error("rates {source_rate} Hz -> {target_rate} Hz are not commensurate within tolerance {tolerance}")]
    IncommensurateRates {
        source_rate: f64,
        target_rate: f64,
        tolerance: f64,
    },

    #[error("training diverged at epoch {epoch}, step {step} (learning rate {learning_rate}): {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        learning_rate: f64,
        detail: String,
    },

    #[error("trellis has {states} states, limit is {limit}")]
    StateOverflow { states: u64, limit: u64 },

    #[error("no trained model for SIC stage {0}")]
    MissingStageModel(usize),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::IncommensurateRates { .. } => 2,
            Error::Divergence { .. } => 3,
            _ => 1,
        }
    }
}
