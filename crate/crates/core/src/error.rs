use std::fmt;
use std::io;

/// Error type shared by every module in the crate.
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes do not satisfy an operation's contract.
    Shape(String),
    /// Input value outside an operation's documented domain.
    Domain(String),
    /// An API precondition was violated (wrong call order, size contract, ...).
    Contract(String),
    /// Numerical failure (non-PSD matrix, singular factorization, ...).
    Numeric(String),
    /// Malformed on-disk data (IDX files, checkpoint container).
    Format(String),
    /// Dataset does not match the expected corpus.
    Ingest(String),
    Io(io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Ingest(msg) => write!(f, "ingest error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}
