use thiserror::Error;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error)]
pub enum Error {
    /// Input with the wrong shape, length, or label.
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// A numeric argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("episode is complete; reset before stepping again")]
    EpisodeComplete,

    /// Clustering or another statistic was asked to work on input that cannot support it.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("cannot label clusters: mean opponent reward is {0} in both clusters")]
    UnresolvedLabeling(f64),

    #[error("invalid configuration field `{field}`: {message}")]
    Validation { field: String, message: String },

    /// A run broke a property it is required to keep.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn rejected(msg: impl Into<String>) -> Self {
        Error::RejectedInput(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
