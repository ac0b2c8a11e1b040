use thiserror::Error;

/// Errors raised by the library. Each variant maps onto one CLI exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed input, unknown names, violated preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A numeric routine failed to converge or produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A single trajectory left the finite domain.
    #[error("replica {replica} diverged at t={time}")]
    Diverged { replica: u64, time: f64 },

    /// Every replica of an ensemble diverged; nothing left to aggregate.
    #[error("all {n_replicas} replicas diverged")]
    AllDiverged { n_replicas: usize },
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Numeric(_) => 3,
            Error::Diverged { .. } | Error::AllDiverged { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
