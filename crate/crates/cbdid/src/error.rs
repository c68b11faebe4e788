//! Errors of the std layer and their exit codes.

/// Result alias for this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failures of ingestion, configuration, estimation and simulation runs.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Error from the estimation library.
    #[error(transparent)]
    Core(#[from] cbdid_core::Error),
    /// A file could not be read or written.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// Invalid flag or config-file content.
    #[error("config error: {0}")]
    Config(String),
    /// A Monte Carlo run exceeded its failure budget.
    #[error("{failed} of {attempted} replications failed in {table} (limit 1%)")]
    FailureRate { table: String, failed: usize, attempted: usize },
}

impl Error {
    /// Process exit code: 3 for numerical failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) if e.is_numerical() => 3,
            Error::FailureRate { .. } => 3,
            _ => 2,
        }
    }
}
