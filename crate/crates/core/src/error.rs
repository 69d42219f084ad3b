use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("vectors are numerically dependent (step {step}, residual {residual:e})")]
    RankDeficient { step: usize, residual: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate simplices: {indices:?}")]
    DegenerateSimplices { indices: Vec<usize> },

    #[error("unsupported case: {0}")]
    Unsupported(String),

    #[error("degenerate configuration after {retries} retries: {detail}")]
    DegenerateConfiguration { retries: usize, detail: String },

    #[error("insufficient data: need at least {needed} points, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("iteration limit of {rounds} rounds reached")]
    IterationLimit { rounds: usize },

    #[error("no point of the set enters the cone around the current plane")]
    NoFirstHit,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
