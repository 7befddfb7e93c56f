use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("concentration saturated (mean resultant length {resultant}); capped at {capped}")]
    Saturated { resultant: f64, capped: f64 },

    #[error("tangent construction failed after {0} retries")]
    TangentRetry(usize),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("invalid specification: {0}")]
    Spec(String),

    #[error("generator recipe failed: {0}")]
    Recipe(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("truncated file: need {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
