use sawt_tensor::{Graph, Tensor};

use super::ctc::ctc_loss_var;
use super::decode::{decode_ctc, DecodeMode, Fusion, Hypothesis};
use super::{check_batch, encode_speech, update, FinetuneConfig, FinetuneReport, TaskError, Terms};
use crate::audio::Waveform;
use crate::model::net::{ctc_logits, decoder, text_decoder_postnet, text_decoder_prenet};
use crate::model::{Ctx, Model};
use crate::pretrain::losses::text_dae_loss;
use crate::pretrain::TrainState;
use crate::prep::{pad_ids, SpeechItem};
use crate::text::Special;

/// Recognition loss terms: CTC over encoder frames, plus the decoder
/// cross-entropy when `cfg.ce_weight > 0`. Without it the decoder is never run.
pub fn asr_terms<'g>(ctx: &Ctx<'g>, model: &Model, batch: &[&SpeechItem], cfg: &FinetuneConfig) -> Result<Terms<'g>, TaskError> {
    let waves: Vec<&Waveform> = batch.iter().map(|s| &s.wave).collect();
    let (h, frames) = encode_speech(ctx, model, &waves)?;
    let log_probs = ctc_logits(ctx, h).log_softmax();
    let targets: Vec<&[u32]> = batch.iter().map(|s| s.tokens.as_slice()).collect();
    let ctc = ctc_loss_var(ctx, log_probs, &frames, &targets, Special::Blank.id());
    let mut terms = vec![("ctc", 1.0, ctc)];
    if cfg.ce_weight > 0.0 {
        let mc = &model.config;
        let inputs: Vec<Vec<u32>> = targets
            .iter()
            .map(|t| std::iter::once(Special::Bos.id()).chain(t.iter().copied()).collect())
            .collect();
        let outputs: Vec<Vec<u32>> = targets
            .iter()
            .map(|t| t.iter().copied().chain(std::iter::once(Special::Eos.id())).collect())
            .collect();
        let (din, _, lengths) = pad_ids(&inputs.iter().map(Vec::as_slice).collect::<Vec<_>>(), Special::Pad.id());
        let (dout, _, _) = pad_ids(&outputs.iter().map(Vec::as_slice).collect::<Vec<_>>(), Special::Pad.id());
        let y = text_decoder_prenet(ctx, mc, &din, batch.len())?;
        let hd = decoder(ctx, mc, y, h, &frames);
        let ce = text_dae_loss(ctx, text_decoder_postnet(ctx, hd), &dout, &lengths)
            .map_err(|e| TaskError::Shape(e.to_string()))?;
        terms.push(("ce", cfg.ce_weight, ce));
    }
    Ok(terms)
}

/// One recognition update over [`asr_terms`].
pub fn finetune_asr_step(
    batch: &[&SpeechItem],
    model: &mut Model,
    state: &mut TrainState,
    cfg: &FinetuneConfig,
) -> Result<FinetuneReport, TaskError> {
    check_batch(batch)?;
    update(model, state, cfg, "asr", |ctx, model| asr_terms(ctx, model, batch, cfg))
}

/// Per-frame log-probabilities of the recognition head, `frames × vocab`.
pub fn asr_log_probs(model: &Model, wave: &Waveform) -> Result<Tensor, TaskError> {
    let g = Graph::new();
    let ctx = Ctx::eval(&g, &model.params);
    let (h, _) = encode_speech(&ctx, model, &[wave])?;
    let lp = ctc_logits(&ctx, h).log_softmax().value();
    let s = lp.shape().to_vec();
    Ok((*lp).clone().reshape(&[s[1], s[2]]))
}

pub fn transcribe(
    model: &Model,
    wave: &Waveform,
    mode: DecodeMode,
    fusion: Option<&Fusion<'_>>,
) -> Result<Hypothesis, TaskError> {
    if let Some(f) = fusion {
        if f.lm.vocab_size() != model.config.vocab_size {
            return Err(TaskError::VocabMismatch {
                expected: model.config.vocab_size,
                found: f.lm.vocab_size(),
            });
        }
    }
    let lp = asr_log_probs(model, wave)?;
    Ok(decode_ctc(lp.data(), lp.shape()[1], Special::Blank.id(), mode, fusion))
}
