use thiserror::Error;

/// Errors raised across the crate. Variant names are part of the CLI and
/// HTTP surface (they are reported verbatim), so keep them stable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pitch {0} is outside the MIDI range 0..=127")]
    InvalidPitch(i64),
    #[error("token sequence of length {0} exceeds the maximum of {max}", max = crate::codec::MAX_TOKENS)]
    TokenOverflow(usize),
    #[error("segment contains no notes")]
    EmptySegment,
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("index {index} out of range for {bound} classes")]
    IndexError { index: usize, bound: usize },
    #[error("operation not supported in {0} mode")]
    UnsupportedInMode(String),
    #[error("latent regularization needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("arousal label {0} is outside [-1, 1]")]
    InvalidLabel(f64),
    #[error("malformed MIDI: {0}")]
    MalformedMidi(String),
    #[error("parse error on line {line}: {detail}")]
    ParseError { line: usize, detail: String },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("training diverged at step {step}")]
    Diverged { step: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable variant name, used in error payloads.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidPitch(_) => "InvalidPitch",
            Error::TokenOverflow(_) => "TokenOverflow",
            Error::EmptySegment => "EmptySegment",
            Error::ShapeError(_) => "ShapeError",
            Error::IndexError { .. } => "IndexError",
            Error::UnsupportedInMode(_) => "UnsupportedInMode",
            Error::BatchTooSmall(_) => "BatchTooSmall",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::InvalidLabel(_) => "InvalidLabel",
            Error::MalformedMidi(_) => "MalformedMidi",
            Error::ParseError { .. } => "ParseError",
            Error::InvalidSweep(_) => "InvalidSweep",
            Error::InsufficientSamples(_) => "InsufficientSamples",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::MalformedCheckpoint(_) => "MalformedCheckpoint",
            Error::Diverged { .. } => "Diverged",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
