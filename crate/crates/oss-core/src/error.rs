//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, OssError>;

#[derive(Debug, Error)]
pub enum OssError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Wire-protocol violation. Retains the offending line for diagnostics.
    #[error("protocol error: {reason}; line: {line:?}")]
    Protocol { reason: String, line: String },

    /// Velocity-provider transport failure, carrying the underlying cause.
    #[error("provider error: {context}")]
    Provider {
        context: String,
        #[source]
        source: Option<Box<dyn std::error::Error + Send + Sync>>,
    },

    #[error("numerical blow-up at step {step}: {reason}")]
    Numerical { step: usize, reason: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("{count} schedules exceed the enumeration cap {cap}; reduce N or M")]
    CapExceeded { count: u128, cap: u128 },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl OssError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        OssError::InvalidArgument(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        OssError::Domain(msg.into())
    }

    pub fn protocol(reason: impl Into<String>, line: impl Into<String>) -> Self {
        OssError::Protocol {
            reason: reason.into(),
            line: line.into(),
        }
    }

    pub fn provider(context: impl Into<String>) -> Self {
        OssError::Provider {
            context: context.into(),
            source: None,
        }
    }

    pub fn provider_caused(
        context: impl Into<String>,
        source: impl std::error::Error + Send + Sync + 'static,
    ) -> Self {
        OssError::Provider {
            context: context.into(),
            source: Some(Box::new(source)),
        }
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        OssError::Internal(msg.into())
    }
}
