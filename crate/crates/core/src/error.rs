use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("model build failed at {stage}: {detail}")]
    Build { stage: String, detail: String },

    #[error("integrity error at byte {offset}: {detail}")]
    Integrity { offset: u64, detail: String },

    #[error("weight mismatch: {0}")]
    WeightMismatch(String),

    #[error("signal processing error: {0}")]
    Signal(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short, stable class name for machine-readable error reporting.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Config(_) => "config",
            Error::TapeConsumed => "tape",
            Error::Label { .. } => "label",
            Error::MissingGradient(_) => "gradient",
            Error::Build { .. } => "build",
            Error::Integrity { .. } => "integrity",
            Error::WeightMismatch(_) => "weights",
            Error::Signal(_) => "signal",
            Error::Data(_) => "data",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
