use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid cost: {0}")]
    InvalidCost(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("argument {value} outside the domain of {what}")]
    DomainError { what: &'static str, value: f64 },

    /// The scalar matching equation could not be brought below tolerance.
    /// `atom` and `sweep` are filled in as the failure propagates outward.
    #[error("root solve failed (atom {atom:?}, sweep {sweep:?}): last residual {residual:e}")]
    RootSolveFailure {
        atom: Option<usize>,
        sweep: Option<usize>,
        residual: f64,
    },

    #[error("tensor with {entries} entries exceeds the cap of {cap}")]
    SizeCapExceeded { entries: usize, cap: usize },

    #[error("oracle cannot handle this instance: {0}")]
    OracleTooLarge(String),

    #[error("oracle requires one-dimensional supports, got dimension {0}")]
    DimensionError(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_atom(self, index: usize) -> Self {
        match self {
            Error::RootSolveFailure {
                sweep, residual, ..
            } => Error::RootSolveFailure {
                atom: Some(index),
                sweep,
                residual,
            },
            other => other,
        }
    }

    pub(crate) fn at_sweep(self, index: usize) -> Self {
        match self {
            Error::RootSolveFailure { atom, residual, .. } => Error::RootSolveFailure {
                atom,
                sweep: Some(index),
                residual,
            },
            other => other,
        }
    }
}
