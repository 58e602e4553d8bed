use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("one-sided violation at row {row}: unit assigned to control received treatment")]
    OneSidedViolation { row: usize },

    #[error("category out of range at row {row}: column {column} has {value}, expected < {k}")]
    CategoryOutOfRange {
        row: usize,
        column: String,
        value: u64,
        k: usize,
    },

    #[error("duplicate unit id {0:?}")]
    DuplicateId(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("unit {0:?} has unknown compliance status")]
    UnknownCompliance(String),

    #[error("invalid compliance status for a one-sided design at unit {0:?}")]
    InvalidCompliance(String),

    #[error("estimand {label}: empty arm after filtering")]
    EmptyArm { label: String },

    #[error("estimand {label}: no identified compliers in the treated arm")]
    DegenerateCompliance { label: String },

    #[error("enumeration limit exceeded: {size} assignments > limit {limit}")]
    EnumerationLimit { size: u128, limit: u128 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error marks a statistic that is undefined on this data
    /// rather than a malformed input.
    pub fn is_degenerate(&self) -> bool {
        matches!(self, Error::EmptyArm { .. } | Error::DegenerateCompliance { .. })
    }
}
