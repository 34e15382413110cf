//! Fine-tuning and inference for recognition, synthesis and dialect
//! identification, plus the character language model used for fusion.

mod asr;
mod ctc;
mod decode;
mod did;
mod lm;
mod tts;

pub use asr::{asr_log_probs, asr_terms, finetune_asr_step, transcribe};
pub use ctc::{ctc_forward_backward, ctc_loss, ctc_loss_var, min_frames};
pub use decode::{decode_ctc, DecodeMode, Fusion, Hypothesis, LanguageModel, DEFAULT_BEAM, DEFAULT_LM_WEIGHT};
pub use did::{add_dialect_labels, classify_dialect, dialect_symbol, did_terms, finetune_did_step, DialectMap};
pub use lm::{train_char_lm, CharLm, LmConfig, LmTrainConfig};
pub use tts::{evaluate_tts, finetune_tts_step, synthesize, tts_terms, GriffinLim, SynthConfig, Synthesis, Vocoder};

use std::collections::BTreeMap;

use sawt_tensor::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::net::{add_positions, encoder, frame_lengths, speech_encoder_prenet};
use crate::model::{Ctx, Model, ModelError};
use crate::pretrain::{AdamConfig, LrSchedule, TrainState};
use crate::prep::{pad_waves, SpeechItem};
use crate::seed::child_seed;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("non-finite {term} loss at step {step}")]
    NonFiniteLoss { term: String, step: u64 },
    #[error("vocabulary mismatch: expected {expected} symbols, found {found}")]
    VocabMismatch { expected: usize, found: usize },
    #[error("unknown dialect label {0:?}")]
    UnknownDialectLabel(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
}

/// Named loss terms with their weights in the total.
pub type Terms<'g> = Vec<(&'static str, f64, Var<'g>)>;

/// Optimizer schedule and loss weights shared by every fine-tuning task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub warmup_updates: u64,
    pub max_updates: u64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Parameter-name prefixes held fixed.
    pub frozen: Vec<String>,
    /// Weight of the auxiliary decoder cross-entropy during recognition.
    pub ce_weight: f64,
    pub stop_weight: f64,
    pub stop_pos_weight: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            warmup_updates: 10_000,
            max_updates: 80_000,
            adam: AdamConfig::default(),
            seed: 0,
            frozen: Vec::new(),
            ce_weight: 0.0,
            stop_weight: 1.0,
            stop_pos_weight: 5.0,
        }
    }
}

impl FinetuneConfig {
    pub fn toy() -> Self {
        Self {
            lr: 1e-3,
            warmup_updates: 100,
            max_updates: 2000,
            ..Self::default()
        }
    }

    /// Toy preset for speech synthesis, which wants a hotter schedule.
    pub fn toy_tts() -> Self {
        Self { lr: 5e-3, ..Self::toy() }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            peak: self.lr,
            warmup: self.warmup_updates,
        }
    }
}

/// Loss values of one fine-tuning update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub terms: BTreeMap<String, f64>,
    pub grad_norm: f64,
}

/// Speech pre-net and encoder without masking; returns states and frame counts.
pub(crate) fn encode_speech<'g>(
    ctx: &Ctx<'g>,
    model: &Model,
    waves: &[&crate::audio::Waveform],
) -> Result<(Var<'g>, Vec<usize>), ModelError> {
    let padded = pad_waves(waves);
    let cfg = &model.config;
    let x = speech_encoder_prenet(ctx, cfg, &padded.samples, waves.len(), padded.width)?;
    let frames = frame_lengths(cfg, &padded.lengths);
    let h = encoder(ctx, cfg, add_positions(ctx, cfg, x), &frames);
    Ok((h, frames))
}

/// Build the loss on a fresh tape, check every term, and apply one Adam update.
pub(crate) fn update<F>(
    model: &mut Model,
    state: &mut TrainState,
    cfg: &FinetuneConfig,
    label: &str,
    build: F,
) -> Result<FinetuneReport, TaskError>
where
    F: for<'g> FnOnce(&Ctx<'g>, &Model) -> Result<Terms<'g>, TaskError>,
{
    let step = state.step + 1;
    let lr = cfg.schedule().at(step);
    let (report, grads) = {
        let g = Graph::new();
        let seed = child_seed(cfg.seed, label) ^ step;
        let ctx = Ctx::new(&g, &model.params, true, seed).with_frozen(&cfg.frozen);
        let terms = build(&ctx, model)?;
        let mut total: Option<Var> = None;
        let mut values = BTreeMap::new();
        for (name, weight, v) in &terms {
            let x = v.item();
            if !x.is_finite() {
                return Err(TaskError::NonFiniteLoss {
                    term: name.to_string(),
                    step,
                });
            }
            values.insert(name.to_string(), x);
            let w = v.scale(*weight);
            total = Some(match total {
                Some(t) => t + w,
                None => w,
            });
        }
        let total = total.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)));
        let report = FinetuneReport {
            step,
            lr,
            loss: total.item(),
            terms: values,
            grad_norm: 0.0,
        };
        (report, ctx.gradients(total))
    };
    let norm = state.adam.step(&mut model.params, &grads, lr, &cfg.adam);
    state.step = step;
    Ok(FinetuneReport { grad_norm: norm, ..report })
}

pub(crate) fn check_batch(batch: &[&SpeechItem]) -> Result<(), TaskError> {
    if batch.is_empty() {
        Err(TaskError::EmptyBatch)
    } else {
        Ok(())
    }
}
