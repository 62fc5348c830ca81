use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("field is not normalized (squared norm {norm})")]
    Normalization { norm: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("evolution diverged at step {step}{}", wave.map(|w| format!(" (wave {w})")).unwrap_or_default())]
    Divergence { step: usize, wave: Option<usize> },

    #[error("focal point: {0}")]
    FocalPoint(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
