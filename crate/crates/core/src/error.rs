use thiserror::Error;

/// Errors raised by the library. Every variant describes an invalid instance
/// or a failed precondition; nothing here is retried internally.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid process spec: {0}")]
    InvalidSpec(String),

    #[error("drift evaluation failed: {0}")]
    Drift(String),

    #[error("lambda inadmissible: {inequality}")]
    Inadmissible {
        lambda: f64,
        threshold: f64,
        inequality: String,
    },

    #[error("initial condition violated: {0}")]
    InitialCondition(String),

    #[error("anchor {index} rejected: {reason}")]
    AnchorRejected { index: usize, reason: String },

    #[error("process `{0}` has no simulation plugin")]
    NoPlugin(String),

    #[error("missing record: {0}")]
    MissingRecord(String),

    #[error("schema error: {0}")]
    Schema(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
