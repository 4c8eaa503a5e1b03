use thiserror::Error;

/// Error type shared by the whole crate.
///
/// The variants map onto the process exit codes used by the CLI:
/// `Contract`/`Config` are usage-level failures, `Data`/`Io`/`Checkpoint`
/// are data errors, and `NonFinite` is a numeric abort.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition or shape contract was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A forward or backward pass produced a non-finite value.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Configuration file or flag could not be parsed.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset layout or image content problem.
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint file is unreadable, truncated, or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> Self {
        Error::Checkpoint(msg.into())
    }
}

/// Shorthand for returning a `Contract` error with a formatted message.
#[macro_export]
macro_rules! contract_bail {
    ($($arg:tt)*) => {
        return Err($crate::error::Error::Contract(format!($($arg)*)))
    };
}

/// Checks a contract precondition, erroring with the message on failure.
#[macro_export]
macro_rules! contract {
    ($cond:expr, $($arg:tt)*) => {
        if !($cond) {
            $crate::contract_bail!($($arg)*);
        }
    };
}
