use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The oracle does not implement the requested capability.
    #[error("unsupported oracle operation: {0}")]
    Unsupported(&'static str),

    /// The oracle answered, but with something unusable (zero-norm embeddings,
    /// non-finite gradients, mismatched shapes).
    #[error("invalid oracle output: {0}")]
    InvalidOracle(String),

    /// The remote worker reported an error.
    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("wire protocol error: {0}")]
    Protocol(String),

    #[error("malformed data file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
