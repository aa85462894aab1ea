use thiserror::Error;

/// Errors produced by tensor construction, estimation, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A value left the mathematical domain of an operation, e.g. a zero
    /// entry passed to an entrywise inverse. The message names the offender.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Multinomial thinning produced an empty third part; reseed and retry.
    #[error("degenerate thinning split: the projection part received zero counts")]
    DegenerateSplit,

    #[error("not implemented: {0}")]
    NotImplemented(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed tensor data: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
