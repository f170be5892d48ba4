use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is structurally wrong (e.g. more states than classes).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument violates a precondition of the operation.
    #[error("validation error: {0}")]
    Validation(String),

    /// The request is well-formed but cannot be satisfied (e.g. target cv out of range).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A dataset file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The labeling budget is exhausted.
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),

    /// A sample id is not present in the pool.
    #[error("unknown sample id {0}")]
    UnknownSample(u64),

    /// The requested selection cannot be served by the current pool.
    #[error("invalid request: {0}")]
    Request(String),

    /// The model cannot perform the requested operation.
    #[error("model capability error: {0}")]
    Capability(String),

    /// The operation was called in an invalid state.
    #[error("state error: {0}")]
    State(String),

    /// Training produced non-finite values.
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    /// Minority/majority split is degenerate (one side empty).
    #[error("degenerate class distribution: {0}")]
    DegenerateDistribution(String),

    /// A statistic is undefined for the given input (e.g. cv with zero mean).
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
