use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate point: {0}")]
    DegeneratePoint(String),

    #[error("point lies on the array (element {element} at zero distance)")]
    OnArray { element: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate image: transformed signal is all zero")]
    DegenerateImage,

    #[error("pixel coordinate out of range: ({row}, {col})")]
    PixelOutOfRange { row: f64, col: f64 },

    #[error("degenerate geometry: steering matrix is rank deficient")]
    RankDeficient,

    #[error("non-finite objective during refinement")]
    NonFinite,

    #[error("weights do not match architecture: {0}")]
    WeightMismatch(String),

    #[error("corrupted weights: non-finite activation in layer {0}")]
    CorruptedWeights(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
