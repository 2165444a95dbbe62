use thiserror::Error;

use crate::grid::Region;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A region does not fit inside the grid it is applied to.
    #[error("region {region:?} lies outside a {height}x{width} grid")]
    OutOfBounds {
        region: Region,
        height: usize,
        width: usize,
    },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cross-field configuration problems (layout divisibility and the like).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
