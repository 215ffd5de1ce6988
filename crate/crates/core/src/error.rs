use thiserror::Error;

/// Errors produced by the hashing library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("insufficient data: need at least {needed} usable vectors, have {have}")]
    InsufficientData { needed: usize, have: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rank error: requested {requested} directions from a {dim}-dimensional space")]
    Rank { requested: usize, dim: usize },

    #[error(
        "non-finite value during training at epoch {epoch}, batch {batch} (gradient norm {grad_norm})"
    )]
    NonFinite {
        epoch: usize,
        batch: usize,
        grad_norm: f64,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
