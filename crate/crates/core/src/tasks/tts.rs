use std::collections::BTreeMap;

use sawt_tensor::{Graph, Tensor};
use serde::{Deserialize, Serialize};

use super::{check_batch, update, FinetuneConfig, FinetuneReport, TaskError, Terms};
use crate::audio::{griffin_lim, mel_to_linear, MelConfig, MelSpectrogram, Waveform, SAMPLE_RATE};
use crate::model::net::{decoder, encoder, speech_decoder_postnet, speech_decoder_prenet, text_encoder_prenet};
use crate::model::{Ctx, Model};
use crate::pretrain::losses::mel_loss;
use crate::pretrain::TrainState;
use crate::prep::{pad_ids, pad_mels, shift_frames, SpeechItem};
use crate::text::Special;

/// Teacher-forced synthesis loss terms: L1 on both mel outputs and the stop loss.
pub fn tts_terms<'g>(ctx: &Ctx<'g>, model: &Model, batch: &[&SpeechItem], cfg: &FinetuneConfig) -> Result<Terms<'g>, TaskError> {
    let mc = &model.config;
    let seqs: Vec<&[u32]> = batch.iter().map(|s| s.tokens.as_slice()).collect();
    let (ids, _, text_lengths) = pad_ids(&seqs, Special::Pad.id());
    let memory = encoder(ctx, mc, text_encoder_prenet(ctx, mc, &ids, batch.len())?, &text_lengths);
    let mels: Vec<&MelSpectrogram> = batch.iter().map(|s| &s.mel).collect();
    let (target, lengths) = pad_mels(&mels);
    let y = speech_decoder_prenet(ctx, mc, ctx.constant(shift_frames(&target)), &vec![0; batch.len()])?;
    let h = decoder(ctx, mc, y, memory, &text_lengths);
    let out = speech_decoder_postnet(ctx, mc, h, &lengths);
    let l = mel_loss(ctx, &out, &target, &lengths, cfg.stop_pos_weight).map_err(|e| TaskError::Shape(e.to_string()))?;
    Ok(vec![
        ("l1_before", 1.0, l.l1_before),
        ("l1_after", 1.0, l.l1_after),
        ("stop", cfg.stop_weight, l.stop),
    ])
}

/// One synthesis update over [`tts_terms`].
pub fn finetune_tts_step(
    batch: &[&SpeechItem],
    model: &mut Model,
    state: &mut TrainState,
    cfg: &FinetuneConfig,
) -> Result<FinetuneReport, TaskError> {
    check_batch(batch)?;
    update(model, state, cfg, "tts", |ctx, model| tts_terms(ctx, model, batch, cfg))
}

/// Teacher-forced loss terms in eval mode (no dropout, no update).
pub fn evaluate_tts(model: &Model, batch: &[&SpeechItem], cfg: &FinetuneConfig) -> Result<BTreeMap<String, f64>, TaskError> {
    check_batch(batch)?;
    let g = Graph::new();
    let ctx = Ctx::eval(&g, &model.params);
    Ok(tts_terms(&ctx, model, batch, cfg)?
        .into_iter()
        .map(|(name, _, v)| (name.to_string(), v.item()))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub max_frames: usize,
    pub stop_threshold: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            max_frames: 1000,
            stop_threshold: 0.5,
        }
    }
}

pub struct Synthesis {
    pub mel: MelSpectrogram,
    /// Generation ran to `max_frames` without the stop head firing.
    pub hit_max_frames: bool,
}

/// Autoregressive mel generation in eval mode. Each step feeds back the
/// pre-residual frame; the residual post-net runs once over the whole output.
pub fn synthesize(model: &Model, ids: &[u32], cfg: &SynthConfig, mel_cfg: &MelConfig) -> Result<Synthesis, TaskError> {
    let mc = &model.config;
    if ids.is_empty() {
        return Err(TaskError::EmptyBatch);
    }
    let memory: Tensor = {
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &model.params);
        let h = encoder(&ctx, mc, text_encoder_prenet(&ctx, mc, ids, 1)?, &[ids.len()]);
        (*h.value()).clone()
    };
    let m = mc.mel_bins;
    let mut frames: Vec<f64> = Vec::new();
    let mut hit_max = true;
    let mut n = 0;
    while n < cfg.max_frames.max(1) {
        n += 1;
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &model.params);
        let mut input = vec![0.0; m];
        input.extend_from_slice(&frames);
        let y = speech_decoder_prenet(&ctx, mc, ctx.constant(Tensor::new(vec![1, n, m], input)), &[0])?;
        let h = decoder(&ctx, mc, y, ctx.constant(memory.clone()), &[ids.len()]);
        let h = h.narrow(1, n - 1, 1);
        let out = speech_decoder_postnet(&ctx, mc, h, &[1]);
        frames.extend_from_slice(out.before.value().data());
        let p = 1.0 / (1.0 + (-out.stop.item()).exp());
        if p > cfg.stop_threshold {
            hit_max = false;
            break;
        }
    }
    // full pass for the residual refinement
    let g = Graph::new();
    let ctx = Ctx::eval(&g, &model.params);
    let target = Tensor::new(vec![1, n, m], frames);
    let y = speech_decoder_prenet(&ctx, mc, ctx.constant(shift_frames(&target)), &[0])?;
    let h = decoder(&ctx, mc, y, ctx.constant(memory), &[ids.len()]);
    let after = speech_decoder_postnet(&ctx, mc, h, &[n]).after.value();
    let rate = f64::from(SAMPLE_RATE);
    let mel = MelSpectrogram::from_frames(
        after.data().iter().map(|&v| v as f32).collect(),
        m,
        mel_cfg.hop_length as f64 / rate,
        mel_cfg.win_length as f64 / rate,
    );
    Ok(Synthesis {
        mel,
        hit_max_frames: hit_max,
    })
}

pub trait Vocoder {
    fn vocode(&self, mel: &MelSpectrogram) -> Waveform;
}

/// Phase reconstruction from the mel magnitudes alone.
#[derive(Clone, Debug)]
pub struct GriffinLim {
    pub mel: MelConfig,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for GriffinLim {
    fn default() -> Self {
        Self {
            mel: MelConfig::default(),
            iterations: 64,
            seed: 0,
        }
    }
}

impl Vocoder for GriffinLim {
    fn vocode(&self, mel: &MelSpectrogram) -> Waveform {
        griffin_lim(&mel_to_linear(mel, &self.mel), &self.mel, self.iterations, self.seed)
    }
}
