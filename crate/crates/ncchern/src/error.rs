use thiserror::Error;

/// Crate-wide error type. Numerical preconditions fail loudly rather than
/// silently degrading the reported invariants.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("linear algebra backend failure: {0}")]
    Linalg(String),

    #[error("spectral precondition violated: {0}")]
    Spectral(String),

    #[error("index computation ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("cache i/o: {0}")]
    Cache(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
