use thiserror::Error;

#[derive(Debug, Error)]
pub enum QlsvError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported volatility class: {0}")]
    UnsupportedClass(String),
    #[error("grid error: {0}")]
    Grid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, QlsvError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(QlsvError::InvalidParameter(msg.into()))
}
