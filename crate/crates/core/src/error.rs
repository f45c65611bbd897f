use thiserror::Error;

/// Errors produced by the hit-frame library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid court: {0}")]
    InvalidCourt(String),

    #[error("insufficient players: {found} instance(s) on court, need 2")]
    InsufficientPlayers { found: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("every position is ignored; masked loss has no denominator")]
    EmptyMask,

    #[error("batch norm layer `{0}` has no running statistics; run a training step first")]
    MissingRunningStats(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("sequence of length {len} exceeds maximum length {max}")]
    Length { len: usize, max: usize },

    #[error("index {index} outside range of length {len}")]
    Range { index: usize, len: usize },

    #[error("nothing to evaluate: {0}")]
    EmptyEvaluation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
