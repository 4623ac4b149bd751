use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("grid collision: cannot restore strict descent for M={steps}, T={t_max}")]
    GridCollision { steps: usize, t_max: usize },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("stale buffer: expected interval ({expected_start}, {expected_end}), buffer holds ({found_start}, {found_end})")]
    StaleBuffer {
        expected_start: usize,
        expected_end: usize,
        found_start: usize,
        found_end: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("empty sample set")]
    EmptySet,

    #[error("not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
