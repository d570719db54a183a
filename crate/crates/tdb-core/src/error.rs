use thiserror::Error;

/// Errors produced by the compression library.
#[derive(Debug, Error)]
pub enum TdbError {
    #[error("mode index {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    #[error("invalid multirank: {context}")]
    InvalidRank { context: String },

    #[error("rank collapse in mode {mode}: unfolded core is numerically zero")]
    RankCollapse { mode: usize },

    #[error("non-finite values encountered in {context}")]
    NonFinite { context: String },

    #[error("insufficient history: need {needed} snapshots, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("timestamps must be strictly increasing: t={t} after t={prev}")]
    UnorderedTime { prev: f64, t: f64 },

    #[error("query time {t} outside archive range [{t0}, {t1}]")]
    TimeOutOfRange { t: f64, t0: f64, t1: f64 },

    #[error("invalid group specification: {context}")]
    InvalidGroups { context: String },

    #[error("degenerate state: {context}")]
    Degenerate { context: String },

    #[error("format error in {path}: {context}")]
    Format { path: String, context: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TdbError>;

impl TdbError {
    /// Short machine-parsable category tag used by the CLI exit path.
    pub fn category(&self) -> &'static str {
        match self {
            TdbError::ModeOutOfRange { .. } => "mode-range",
            TdbError::ShapeMismatch { .. } => "shape",
            TdbError::InvalidRank { .. } => "rank",
            TdbError::RankCollapse { .. } => "rank-collapse",
            TdbError::NonFinite { .. } => "non-finite",
            TdbError::InsufficientHistory { .. } => "history",
            TdbError::UnorderedTime { .. } => "time-order",
            TdbError::TimeOutOfRange { .. } => "time-range",
            TdbError::InvalidGroups { .. } => "groups",
            TdbError::Degenerate { .. } => "degenerate",
            TdbError::Format { .. } => "format",
            TdbError::Config(_) => "config",
            TdbError::Io(_) => "io",
        }
    }
}
