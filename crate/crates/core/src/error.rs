use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of its allowed range.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// A caller broke an operation's precondition (shape, index, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An optimization or evaluation produced NaN/inf.
    #[error("non-finite value in {stage} at iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },

    /// Remote oracle transport failed (after retries).
    #[error("transport failure: {0}")]
    Transport(String),

    /// Remote oracle answered with something that does not fit the schema.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Malformed file contents.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
