use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sawt_tensor::{Graph, Var};
use serde::{Deserialize, Serialize};

use super::losses::{diversity_loss_var, mel_loss, speech_mlm_loss, text_dae_loss};
use super::{corrupt_text, mix_quantized, Adam, AdamConfig, LrSchedule, PretrainError};
use crate::audio::sample_mask_spans;
use crate::model::net::{
    add_positions, apply_frame_mask, decoder, encoder, frame_lengths, mlm_logits, speech_decoder_postnet,
    speech_decoder_prenet, speech_encoder_prenet, text_decoder_postnet, text_decoder_prenet, text_encoder_prenet,
};
use crate::model::{Ctx, Model};
use crate::prep::{pad_ids, pad_mels, pad_waves, shift_frames, SpeechItem};
use crate::seed::child_seed;
use crate::text::Special;

/// Schedule, loss weights and corruption settings for joint pre-training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_updates: u64,
    pub max_updates: u64,
    pub w_mlm: f64,
    pub w_sdae: f64,
    pub w_tdae: f64,
    pub w_div: f64,
    /// Probability that a frame starts a masked span.
    pub mask_prob: f64,
    pub text_mask_rate: f64,
    pub stop_weight: f64,
    pub stop_pos_weight: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            warmup_updates: 64_000,
            max_updates: 200_000,
            w_mlm: 1.0,
            w_sdae: 1.0,
            w_tdae: 1.0,
            w_div: 1.0,
            mask_prob: 0.065,
            text_mask_rate: 0.3,
            stop_weight: 1.0,
            stop_pos_weight: 5.0,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Short schedule for seconds-long toy runs.
    pub fn toy() -> Self {
        Self {
            lr: 1e-3,
            warmup_updates: 50,
            max_updates: 1000,
            // a 100-entry codebook sees ~60 rows per batch; unit weight barely moves it
            w_div: 3.0,
            ..Self::default()
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            peak: self.lr,
            warmup: self.warmup_updates,
        }
    }

    pub fn validate(&self) -> Result<(), PretrainError> {
        let w = [self.w_mlm, self.w_sdae, self.w_tdae, self.w_div, self.stop_weight];
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(PretrainError::BadConfig("loss weights must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) || !(0.0..=1.0).contains(&self.text_mask_rate) {
            return Err(PretrainError::BadConfig("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Loss values of one update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub lr: f64,
    pub speech_mlm: f64,
    pub speech_dae: f64,
    pub text_dae: f64,
    pub diversity: f64,
    pub total: f64,
    pub masked_frames: usize,
    pub codes_replaced: usize,
    pub grad_norm: f64,
}

/// Optimizer state carried across updates.
#[derive(Clone, Debug, Default)]
pub struct TrainState {
    pub adam: Adam,
    pub step: u64,
}

/// The four loss terms of one forward pass, before weighting.
pub struct PretrainTerms<'g> {
    pub speech_mlm: Var<'g>,
    pub speech_dae: Var<'g>,
    pub text_dae: Var<'g>,
    pub diversity: Var<'g>,
    pub masked_frames: usize,
    pub codes_replaced: usize,
}

/// Forward pass of all four objectives on one speech batch and one text batch.
///
/// Masks, text corruption and code replacement are drawn from `rng`.
pub fn pretrain_terms<'g>(
    ctx: &Ctx<'g>,
    model: &Model,
    speech: &[&SpeechItem],
    text: &[&[u32]],
    cfg: &TrainConfig,
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PretrainTerms<'g>, PretrainError> {
    let mc = &model.config;
    let g = ctx.graph;
    let mut usage: Vec<Option<Var<'g>>> = vec![None; mc.codebook_groups];
    let mut rows = 0usize;
    let mut replaced = 0;
    let mut add_usage = |sums: &[Var<'g>], n: usize| {
        for (u, s) in usage.iter_mut().zip(sums) {
            *u = Some(match *u {
                Some(acc) => acc + *s,
                None => *s,
            });
        }
        rows += n;
    };

    // speech: masked prediction and reconstruction
    let (speech_mlm, speech_dae, masked_frames) = if speech.is_empty() {
        (g.scalar(0.0), g.scalar(0.0), 0)
    } else {
        let waves: Vec<_> = speech.iter().map(|s| &s.wave).collect();
        let padded = pad_waves(&waves);
        let b = speech.len();
        let x = speech_encoder_prenet(ctx, mc, &padded.samples, b, padded.width)?;
        let t = x.shape()[1];
        let frames = frame_lengths(mc, &padded.lengths);
        let mut masked = vec![false; b * t];
        let mut labels = vec![0u32; b * t];
        for (i, item) in speech.iter().enumerate() {
            if frames[i] == 0 {
                continue;
            }
            let spec = sample_mask_spans(frames[i], mc.span_len, cfg.mask_prob, rng);
            for f in spec.indices() {
                masked[i * t + f] = true;
            }
            if item.labels.len() != frames[i] {
                return Err(PretrainError::ShapeMismatch(format!(
                    "{}: {} labels for {} frames",
                    item.id,
                    item.labels.len(),
                    frames[i]
                )));
            }
            labels[i * t..i * t + frames[i]].copy_from_slice(&item.labels);
        }
        let x = add_positions(ctx, mc, apply_frame_mask(ctx, x, &masked));
        let h = encoder(ctx, mc, x, &frames);
        let (mlm, n_masked) = speech_mlm_loss(ctx, mlm_logits(ctx, h), &labels, &masked);
        let mixed = mix_quantized(ctx, mc, h, &frames, mc.mix_prob, tau, rng)?;
        replaced += mixed.replaced;
        add_usage(&mixed.usage_sum, mixed.valid);

        let mels: Vec<_> = speech.iter().map(|s| &s.mel).collect();
        let (target, mel_lengths) = pad_mels(&mels);
        let y = speech_decoder_prenet(ctx, mc, ctx.constant(shift_frames(&target)), &vec![0; b])?;
        let hd = decoder(ctx, mc, y, mixed.states, &frames);
        let out = speech_decoder_postnet(ctx, mc, hd, &mel_lengths);
        let dae = mel_loss(ctx, &out, &target, &mel_lengths, cfg.stop_pos_weight)?.total(cfg.stop_weight);
        (mlm, dae, n_masked)
    };

    // text: span-masked denoising
    let text_dae = if text.is_empty() {
        g.scalar(0.0)
    } else {
        let b = text.len();
        let corrupted: Vec<Vec<u32>> = text.iter().map(|ids| corrupt_text(ids, cfg.text_mask_rate, rng).input).collect();
        let refs: Vec<&[u32]> = corrupted.iter().map(Vec::as_slice).collect();
        let (enc_ids, _, enc_lengths) = pad_ids(&refs, Special::Pad.id());
        let x = text_encoder_prenet(ctx, mc, &enc_ids, b)?;
        let h = encoder(ctx, mc, x, &enc_lengths);
        let mixed = mix_quantized(ctx, mc, h, &enc_lengths, mc.mix_prob, tau, rng)?;
        replaced += mixed.replaced;
        add_usage(&mixed.usage_sum, mixed.valid);

        let dec_in: Vec<Vec<u32>> = text
            .iter()
            .map(|ids| std::iter::once(Special::Bos.id()).chain(ids.iter().copied()).collect())
            .collect();
        let dec_out: Vec<Vec<u32>> = text
            .iter()
            .map(|ids| ids.iter().copied().chain(std::iter::once(Special::Eos.id())).collect())
            .collect();
        let (din, _, dec_lengths) = pad_ids(&dec_in.iter().map(Vec::as_slice).collect::<Vec<_>>(), Special::Pad.id());
        let (dout, _, _) = pad_ids(&dec_out.iter().map(Vec::as_slice).collect::<Vec<_>>(), Special::Pad.id());
        let y = text_decoder_prenet(ctx, mc, &din, b)?;
        let hd = decoder(ctx, mc, y, mixed.states, &enc_lengths);
        text_dae_loss(ctx, text_decoder_postnet(ctx, hd), &dout, &dec_lengths)?
    };

    let diversity = if rows == 0 {
        g.scalar(0.0)
    } else {
        let groups: Vec<Var<'g>> = usage.into_iter().map(|u| u.expect("usage for every group")).collect();
        let p = g.concat(&groups, 0).scale(1.0 / rows as f64);
        diversity_loss_var(ctx, p)
    };

    Ok(PretrainTerms {
        speech_mlm,
        speech_dae,
        text_dae,
        diversity,
        masked_frames,
        codes_replaced: replaced,
    })
}

impl<'g> PretrainTerms<'g> {
    pub fn total(&self, cfg: &TrainConfig) -> Var<'g> {
        self.speech_mlm.scale(cfg.w_mlm)
            + self.speech_dae.scale(cfg.w_sdae)
            + self.text_dae.scale(cfg.w_tdae)
            + self.diversity.scale(cfg.w_div)
    }
}

/// One joint update: all four losses, their weighted sum, and an Adam step
/// at the scheduled rate. Deterministic given `cfg.seed` and `state.step`.
pub fn pretrain_step(
    speech: &[&SpeechItem],
    text: &[&[u32]],
    model: &mut Model,
    state: &mut TrainState,
    cfg: &TrainConfig,
) -> Result<LossReport, PretrainError> {
    cfg.validate()?;
    let step = state.step + 1;
    let step_seed = child_seed(cfg.seed, "pretrain") ^ step;
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
    let tau = model.config.codebook_tau(state.step);
    let (report, grads) = {
        let g = Graph::new();
        let ctx = Ctx::new(&g, &model.params, true, step_seed.rotate_left(17));
        let terms = pretrain_terms(&ctx, model, speech, text, cfg, tau, &mut rng)?;
        let total = terms.total(cfg);
        let named = [
            ("speech_mlm", terms.speech_mlm),
            ("speech_dae", terms.speech_dae),
            ("text_dae", terms.text_dae),
            ("diversity", terms.diversity),
            ("total", total),
        ];
        for (name, v) in named {
            if !v.item().is_finite() {
                return Err(PretrainError::NonFiniteLoss {
                    term: name.to_string(),
                    step,
                });
            }
        }
        let report = LossReport {
            step,
            lr: cfg.schedule().at(step),
            speech_mlm: terms.speech_mlm.item(),
            speech_dae: terms.speech_dae.item(),
            text_dae: terms.text_dae.item(),
            diversity: terms.diversity.item(),
            total: total.item(),
            masked_frames: terms.masked_frames,
            codes_replaced: terms.codes_replaced,
            grad_norm: 0.0,
        };
        (report, ctx.gradients(total))
    };
    let norm = state.adam.step(&mut model.params, &grads, report.lr, &cfg.adam);
    state.step = step;
    Ok(LossReport { grad_norm: norm, ..report })
}
