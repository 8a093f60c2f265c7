use std::path::PathBuf;

use thiserror::Error;

/// Every failure the simulator can report.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value produced in {context}")]
    NonFinite { context: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("local SGD diverged at round {round}, step {step} (client {client})")]
    Divergence {
        round: usize,
        step: usize,
        client: usize,
    },

    #[error("enumeration of C({n},{m}) = {count} subsets exceeds the cap of {cap}")]
    OracleScale {
        n: usize,
        m: usize,
        count: u128,
        cap: u128,
    },

    #[error("running mean drifted from the state table: relative error {rel_err:e}")]
    StateDrift { rel_err: f64 },

    #[error("failed to read {path}: {source}")]
    ReadConfig {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    /// True for errors caused by user input rather than by the computation.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            SimError::Config(_)
                | SimError::ReadConfig { .. }
                | SimError::Json(_)
                | SimError::Domain(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
