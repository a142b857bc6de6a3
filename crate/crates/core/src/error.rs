use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("elements live on different measure spaces")]
    SpaceMismatch,

    #[error("invalid measure space: {0}")]
    InvalidSpace(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("growth function undefined at {0}")]
    OutOfDomain(String),

    /// A big-integer evaluation grew past the allowed number of decimal digits.
    #[error("digit budget of {budget} decimal digits exceeded after {iterations} iterations")]
    DigitBudgetExceeded { budget: u64, iterations: u64 },

    #[error("cap exhausted: {0}")]
    CapExceeded(String),

    #[error("singular Gram matrix: {0}")]
    Singular(String),

    #[error("operation needs a pointwise (Koopman) system")]
    NotPointwise,

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for the budget/cap family, which callers report with partial output.
    pub fn is_exhaustion(&self) -> bool {
        matches!(
            self,
            Error::DigitBudgetExceeded { .. } | Error::CapExceeded(_)
        )
    }
}
