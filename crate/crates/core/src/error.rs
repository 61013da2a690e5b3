//! Crate-wide error type.

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an operation's inputs was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A serialized artifact (CSV, JSON) could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// Training or evaluation produced a non-finite value.
    #[error("numerical divergence: {0}")]
    Divergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for `Err(Error::InvalidInput(..))` with format args.
#[macro_export]
macro_rules! invalid_input {
    ($($arg:tt)*) => {
        return Err($crate::Error::InvalidInput(format!($($arg)*)))
    };
}
