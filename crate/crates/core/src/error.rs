use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid frequency: {0}")]
    InvalidFrequency(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no period: fewer than two upward zero crossings were found")]
    NoPeriod,
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error("fit failed for K={k}, L={l}: {reason}")]
    FitFailed { k: usize, l: usize, reason: String },
    #[error("undefined variance: {0}")]
    UndefinedVariance(String),
}
