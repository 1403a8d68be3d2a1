use thiserror::Error;

/// Errors raised while building or running a program.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CobpError {
    /// A name (query, update command, payload predicate, example) that
    /// was referenced but never registered.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("update command '{command}' failed: {reason}")]
    UpdateFailed { command: String, reason: String },

    #[error("live copy '{copy}' failed at step {step}: {reason}")]
    StepFailed {
        copy: String,
        step: u64,
        reason: String,
    },

    #[error("engine invariant violated: live copy '{0}' already exists")]
    DuplicateLiveCopy(String),

    #[error("invalid context-init document: {0}")]
    InitDocument(String),

    #[error("context-namespace events are engine-internal and cannot be enqueued: {0}")]
    ContextEventRejected(String),

    #[error("invalid limits: {0}")]
    Limits(String),

    #[error("state-space bound exceeded after {states} states")]
    BoundExceeded { states: usize },
}

pub type Result<T, E = CobpError> = std::result::Result<T, E>;
