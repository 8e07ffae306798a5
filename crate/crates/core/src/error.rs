use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A group element was used outside the finite support of a sofic map.
    #[error("element {0} is outside the sofic support")]
    OutsideSupport(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("group mismatch: {0}")]
    GroupMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    /// The requested computation is out of reach; the message names alternatives.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("witness cannot exist: {0}")]
    NotSingular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
