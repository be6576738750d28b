use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong length for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A forward tape was used against a network it was not produced by,
    /// or after that network's parameters changed.
    #[error("stale or mismatched tape: {0}")]
    StaleTape(&'static str),

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An operation that needs at least one element received none.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Training produced a non-finite loss.
    #[error("{stage} diverged at step {step} (loss = {loss})")]
    Diverged {
        stage: &'static str,
        step: usize,
        loss: f64,
    },

    /// A reward source scored every calibration probe identically.
    #[error("degenerate reward source {source_id}: zero variance over calibration probes")]
    DegenerateSource { source_id: String },

    /// Two arms were compared on different seed lists.
    #[error("unmatched seeds between arms {arm_a} and {arm_b}")]
    UnmatchedSeeds { arm_a: String, arm_b: String },

    /// Scenario configuration problem.
    #[error("config error: {0}")]
    Config(String),

    /// A directory given as a run output has no manifest, so it was not
    /// produced by a completed run.
    #[error("no manifest.json in {0} (not a completed run directory)")]
    MissingManifest(std::path::PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(value: f64, context: impl FnOnce() -> String) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(context()))
    }
}
