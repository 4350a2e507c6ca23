use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("spectral cutoff K={cutoff} is valid for t >= {t_min:e}, requested t={t:e}")]
    Truncation { cutoff: usize, t_min: f64, t: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("nonpositive density {value:e} at ({x:.6}, {y:.6})")]
    Domain { value: f64, x: f64, y: f64 },

    #[error(
        "grid spacing {spacing:e} too coarse for threshold {xi:e}; need spacing <= {required:e}"
    )]
    Config {
        spacing: f64,
        xi: f64,
        required: f64,
    },

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
