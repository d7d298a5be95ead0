//! Error types shared across the workspace.

/// Unified error type; the CLI maps variants onto its exit-code contract
/// (config/usage -> 2, numeric -> 3).
#[derive(Debug, thiserror::Error)]
pub enum GrowError {
    /// Invalid configuration: unknown task ids, out-of-range hyperparameters,
    /// malformed config files, bad checkpoint headers.
    #[error("config error: {0}")]
    Config(String),

    /// API misuse: stepping a finished episode, out-of-range action,
    /// verifying a non-terminated trajectory.
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite values encountered where finite math is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GrowError>;
