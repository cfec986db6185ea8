//! The fader network: two sequence encoders with regularized latent
//! dimensions, label discriminators, a key-conditioned decoder, a learnable
//! mixture prior, the training objective and checkpoints.

mod batch;
pub mod checkpoint;
mod config;
mod loss;
mod net;
pub mod prior;
mod train;

pub use batch::Batch;
pub use config::{BetaSchedule, ModelConfig, ModelMode, ScalePreset, CONFIG_SCHEMA};
pub use loss::{latent_reg_loss, latent_reg_value, total_loss, LossBreakdown};
pub use net::{decoder_targets, FaderNet, FaderRange, Posterior, TrainMeta};
pub use prior::{infer_cluster, infer_cluster_tensor};
pub use train::{encode_records, fader_ranges, train, train_with, TrainLog, Trained, INFERENCE_CHUNK};
