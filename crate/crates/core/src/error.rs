use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("level underflow: level {requested} is below the canonical level {canonical}")]
    LevelUnderflow { requested: usize, canonical: usize },

    #[error("requested level {requested} is below the current level {current}")]
    Level { requested: usize, current: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("field mismatch: expected {expected}, found {found}")]
    FieldMismatch {
        expected: crate::Field,
        found: crate::Field,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("outside the domain: {0}")]
    Domain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("generated subalgebra exceeds the dimension cap {cap}")]
    CapExceeded { cap: usize },

    #[error("not nilpotent of class <= {max_class}")]
    NotNilpotent { max_class: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("budget exhausted: {0}")]
    Budget(String),

    #[error("rejected: {0}")]
    Rejected(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
