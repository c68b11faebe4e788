//! Error type shared by every module.

use alloc::string::String;
use alloc::vec::Vec;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes of ingestion, fitting and selection.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A required column or field is missing or malformed.
    #[error("schema error: {0}")]
    Schema(String),
    /// A cell could not be parsed. `row` is the 1-based data row.
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },
    /// The dataset has no rows.
    #[error("dataset has no rows")]
    EmptyData,
    /// Only one treatment group is present.
    #[error("dataset needs at least one treated and one control unit")]
    MissingClass,
    /// A covariate index is outside the raw covariate dimension.
    #[error("covariate index {index} out of range (dimension {dim})")]
    IndexOutOfRange { index: usize, dim: usize },
    /// A covariate index appears twice in a specification.
    #[error("duplicate covariate index {0}")]
    DuplicateIndex(usize),
    /// Operand shapes disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// An argument is outside its domain.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A matrix expected to be symmetric is not.
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    /// Logistic fit diverges because the groups are separable.
    #[error("perfect separation: {0}")]
    Separation(String),
    /// A matrix that must be inverted is singular or too ill-conditioned.
    /// `columns` lists the design columns most involved in the near-null direction.
    #[error("rank deficient {what} (condition {condition:e}); suspect columns {columns:?}")]
    Rank {
        what: String,
        condition: f64,
        columns: Vec<usize>,
    },
    /// A propensity equal to 0 or 1 would be divided by.
    #[error("propensity {value} at unit {index} is not strictly inside (0, 1)")]
    DivisionGuard { index: usize, value: f64 },
    /// A treatment group is too small for a variance estimate.
    #[error("{group} group has {size} unit(s); at least 2 are needed")]
    DegenerateGroup { group: &'static str, size: usize },
    /// An iterative fit stopped without meeting its tolerance.
    #[error("{stage} did not converge: {detail}")]
    Convergence { stage: &'static str, detail: String },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Separation(_)
                | Error::Rank { .. }
                | Error::Convergence { .. }
                | Error::NotSymmetric(_)
        )
    }
}
