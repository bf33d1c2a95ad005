use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A frequency plan puts a signal above Nyquist or overlaps bands.
    #[error("frequency plan violation: {0}")]
    FrequencyPlan(String),

    /// Two signals that must share a sample grid do not.
    #[error("signal mismatch: {0}")]
    Mismatch(String),

    /// The scenario configuration failed validation. `key` names the
    /// offending config entry.
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    /// The adaptive filter produced a non-finite value.
    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
