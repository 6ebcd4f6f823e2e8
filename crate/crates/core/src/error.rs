use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty group")]
    EmptyGroup,

    #[error("empty batch")]
    EmptyBatch,

    #[error("no correct reference lengths")]
    NoCorrectReference,

    #[error("rewards not assigned")]
    RewardsNotAssigned,

    #[error("strategy not assigned for query {0}")]
    StrategyUnassigned(String),

    #[error("batch groups have unequal sizes: query {query_id} has {found} completions, expected {expected}")]
    UnequalGroupSize {
        query_id: String,
        expected: usize,
        found: usize,
    },

    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },

    #[error("gradient check failed at step {step}: relative error {rel_err:.3e} exceeds {tolerance:.1e}")]
    GradientCheck {
        step: usize,
        rel_err: f64,
        tolerance: f64,
    },

    #[error("ragged group {query_id}: {found} completions, expected {expected}")]
    RaggedGroup {
        query_id: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate record: query {query_id}, completion_index {completion_index}")]
    DuplicateRecord {
        query_id: String,
        completion_index: u64,
    },

    #[error("completion_index {completion_index} out of range for query {query_id} with {m} completions")]
    IndexOutOfRange {
        query_id: String,
        completion_index: u64,
        m: usize,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid config: {field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("empty query pool")]
    EmptyQueryPool,

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
