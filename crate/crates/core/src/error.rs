use thiserror::Error;

/// Errors produced by the library.
///
/// The variants map onto the CLI exit-code classes: `Domain` and `Numerical`
/// are mathematical failures, `Io` is filesystem trouble, everything else is a
/// validation problem with the caller's input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is out of range [{min}, {max}]")]
    Range {
        what: &'static str,
        value: String,
        min: String,
        max: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn range<V, B>(what: &'static str, value: V, min: B, max: B) -> Self
    where
        V: std::fmt::Display,
        B: std::fmt::Display,
    {
        Error::Range {
            what,
            value: value.to_string(),
            min: min.to_string(),
            max: max.to_string(),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
