//! Fader-style control of symbolic music attributes.
//!
//! Two GRU encoders map a tokenized four-beat segment onto a rhythm latent
//! and a note latent. One dimension of each latent is regularized so that
//! sliding it moves the decoded output's rhythm or note density, and a
//! Gaussian-mixture prior over each latent lets a high-level arousal class
//! be inferred from very few labels and shifted for style transfer.

pub mod codec;
pub mod corpus;
pub mod diff;
pub mod error;
pub mod eval;
pub mod labels;
pub mod model;
pub mod transfer;

pub use codec::{decode_tokens, encode_tokens, quantize_notes, segment_stream, NoteEvent, RawNote, Segment, Token, TokenSeq};
pub use corpus::{CorpusRecord, CorpusSplit};
pub use error::{Error, Result};
pub use labels::{Densities, Feature, KeyVector, NoteLabel, RhythmLabel};
pub use model::{FaderNet, ModelConfig, ModelMode};
pub use transfer::{transfer, ShiftPlan, TransferResult};
