use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("segment has {len} records, at least {min} required")]
    SegmentTooShort { len: usize, min: usize },

    #[error("need at least two segments, found {found}")]
    InsufficientSegments { found: usize },

    #[error("records are not strictly increasing in time at index {index}")]
    NotTimeOrdered { index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("identification failed (final cost {cost:.6e}): {reason}")]
    IdentificationFailed { cost: f64, reason: String },

    #[error("training diverged (cost {cost})")]
    TrainingDiverged { cost: f64 },

    #[error("window too short: have {have}, need {need}")]
    WindowTooShort { have: usize, need: usize },

    #[error("window not full: have {have} of {need}")]
    WindowNotFull { have: usize, need: usize },

    #[error("insufficient data: have {have}, need {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("every supervisor candidate is infeasible ({} evaluated)", .table.len())]
    AllInfeasible { table: Vec<crate::twin::CandidateScore> },

    #[error("retraining deferred: {valid} valid records, {need} required")]
    RetrainDeferred { valid: usize, need: usize },

    #[error("unstable plant configuration: {0}")]
    UnstablePlantConfig(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed csv at line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("unsupported artifact format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
