//! The four self-supervised objectives and the joint pre-training update.

mod corrupt;
pub mod losses;
mod mix;
mod optim;
mod step;

pub use corrupt::{corrupt_text, Corrupted};
pub use losses::{diversity_loss, diversity_loss_var, mel_loss, speech_mlm_loss, text_dae_loss, MelLoss};
pub use mix::{mix_quantized, Mixed};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use step::{pretrain_step, pretrain_terms, LossReport, PretrainTerms, TrainConfig, TrainState};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("non-finite {term} loss at step {step}")]
    NonFiniteLoss { term: String, step: u64 },
    #[error("usage is not a probability distribution: {0}")]
    NonDistribution(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
