//! The shared encoder–decoder and its modality adapters.

use sawt_tensor::{Tensor, Var};

use super::nn::{block, causal_bias, dropout, key_padding_bias, linear, norm, sinusoid, valid_mask, Ctx};
use super::{ModelConfig, ModelError};

/// Per-item encoder frame counts for waveforms of `lengths` samples.
pub fn frame_lengths(cfg: &ModelConfig, lengths: &[usize]) -> Vec<usize> {
    lengths.iter().map(|&l| cfg.frames_for(l)).collect()
}

/// Strided causal convolutions over raw samples (`batch × width`,
/// row-major), then a projection to `d_model`. Yields `floor(width / 320)`
/// frames, and frame `t` depends only on samples before `(t + 1) · 320`.
pub fn speech_encoder_prenet<'g>(
    ctx: &Ctx<'g>,
    cfg: &ModelConfig,
    samples: &[f32],
    batch: usize,
    width: usize,
) -> Result<Var<'g>, ModelError> {
    let hop = cfg.frame_hop();
    if width < hop {
        return Err(ModelError::TooShort { samples: width, needed: hop });
    }
    assert_eq!(samples.len(), batch * width);
    let data = samples.iter().map(|&s| f64::from(s)).collect();
    let mut x = ctx.constant(Tensor::new(vec![batch, width, 1], data));
    for (i, (&k, &s)) in cfg.conv_kernels.iter().zip(&cfg.conv_strides).enumerate() {
        let p = format!("speech_encoder_prenet.conv{i}");
        x = x.conv1d(ctx.p(&format!("{p}.w")), k, s, (k - s, 0)) + ctx.p(&format!("{p}.b"));
        x = x.layer_norm(1e-5).gelu();
    }
    Ok(linear(ctx, x, "speech_encoder_prenet.proj"))
}

/// Replace flagged frames (`batch × frames`, row-major) by the learned mask embedding.
pub fn apply_frame_mask<'g>(ctx: &Ctx<'g>, x: Var<'g>, masked: &[bool]) -> Var<'g> {
    let s = x.shape();
    assert_eq!(masked.len(), s[0] * s[1]);
    if !masked.contains(&true) {
        return x;
    }
    let m = Tensor::new(vec![s[0], s[1], 1], masked.iter().map(|&b| f64::from(u8::from(b))).collect());
    let keep = ctx.constant(m.map(|v| 1.0 - v));
    x * keep + ctx.constant(m) * ctx.p("speech_encoder_prenet.mask_emb")
}

/// Add sinusoidal positions and apply input dropout.
pub fn add_positions<'g>(ctx: &Ctx<'g>, cfg: &ModelConfig, x: Var<'g>) -> Var<'g> {
    let s = x.shape();
    let x = x + ctx.constant(sinusoid(s[1], s[2]));
    dropout(ctx, x, cfg.dropout)
}

fn embed<'g>(ctx: &Ctx<'g>, cfg: &ModelConfig, table: &str, ids: &[u32], batch: usize) -> Result<Var<'g>, ModelError> {
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
        return Err(ModelError::InvalidId(bad));
    }
    let width = if batch == 0 { 0 } else { ids.len() / batch };
    let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let e = ctx.graph.gather_rows(ctx.p(table), &rows).reshape(&[batch, width, cfg.d_model]);
    let x = e.scale((cfg.d_model as f64).sqrt());
    Ok(add_positions(ctx, cfg, x))
}

/// Token embeddings plus positions for `batch` rows of ids.
pub fn text_encoder_prenet<'g>(ctx: &Ctx<'g>, cfg: &ModelConfig, ids: &[u32], batch: usize) -> Result<Var<'g>, ModelError> {
    embed(ctx, cfg, "text_encoder_prenet.embed", ids, batch)
}

pub fn text_decoder_prenet<'g>(ctx: &Ctx<'g>, cfg: &ModelConfig, ids: &[u32], batch: usize) -> Result<Var<'g>, ModelError> {
    embed(ctx, cfg, "text_decoder_prenet.embed", ids, batch)
}

/// Vocabulary logits, `[batch, len, vocab]`.
pub fn text_decoder_postnet<'g>(ctx: &Ctx<'g>, h: Var<'g>) -> Var<'g> {
    linear(ctx, h, "text_decoder_postnet.out")
}

/// Shared encoder. Keys past each row's length are hidden.
pub fn encoder<'g>(ctx: &Ctx<'g>, cfg: &ModelConfig, x: Var<'g>, lengths: &[usize]) -> Var<'g> {
    let width = x.shape()[1];
    let bias = ctx.constant(key_padding_bias(lengths, width));
    let mut h = x;
    for l in 0..cfg.enc_layers {
        h = block(ctx, h, Some(bias), None, &format!("encoder.layer{l}"), cfg.n_heads, cfg.dropout);
    }
    norm(ctx, h, "encoder.ln")
}

/// Shared causal decoder attending over `memory`.
pub fn decoder<'g>(ctx: &Ctx<'g>, cfg: &ModelConfig, y: Var<'g>, memory: Var<'g>, memory_lengths: &[usize]) -> Var<'g> {
    let t = y.shape()[1];
    let self_bias = ctx.constant(causal_bias(t));
    let mem_bias = ctx.constant(key_padding_bias(memory_lengths, memory.shape()[1]));
    let mut h = y;
    for l in 0..cfg.dec_layers {
        h = block(
            ctx,
            h,
            Some(self_bias),
            Some((memory, Some(mem_bias))),
            &format!("decoder.layer{l}"),
            cfg.n_heads,
            cfg.dropout,
        );
    }
    norm(ctx, h, "decoder.ln")
}

/// Two ReLU layers over previous mel frames, a projection, the speaker
/// embedding and positions. `mel` is `[batch, frames, mel_bins]`.
pub fn speech_decoder_prenet<'g>(
    ctx: &Ctx<'g>,
    cfg: &ModelConfig,
    mel: Var<'g>,
    speakers: &[usize],
) -> Result<Var<'g>, ModelError> {
    let s = mel.shape();
    if s.len() != 3 || s[2] != cfg.mel_bins {
        return Err(ModelError::DimMismatch {
            expected: cfg.mel_bins,
            found: s.last().copied().unwrap_or(0),
        });
    }
    assert_eq!(speakers.len(), s[0]);
    let h = linear(ctx, mel, "speech_decoder_prenet.fc1").relu();
    let h = dropout(ctx, h, cfg.prenet_dropout);
    let h = linear(ctx, h, "speech_decoder_prenet.fc2").relu();
    let h = dropout(ctx, h, cfg.prenet_dropout);
    let h = linear(ctx, h, "speech_decoder_prenet.proj");
    let spk = ctx
        .graph
        .gather_rows(ctx.p("speech_decoder_prenet.speaker"), speakers)
        .reshape(&[s[0], 1, cfg.d_model]);
    Ok(add_positions(ctx, cfg, h + spk))
}

/// Outputs of the speech decoder post-net.
pub struct MelOutput<'g> {
    pub before: Var<'g>,
    pub after: Var<'g>,
    /// `[batch, frames]` stop-token logits.
    pub stop: Var<'g>,
}

/// Mel and stop projections followed by a residual convolution stack.
/// Hidden states past each row's length are zeroed first so padded steps
/// cannot leak into valid frames through the convolutions.
pub fn speech_decoder_postnet<'g>(ctx: &Ctx<'g>, cfg: &ModelConfig, h: Var<'g>, lengths: &[usize]) -> MelOutput<'g> {
    let s = h.shape();
    let (b, t) = (s[0], s[1]);
    let h = h * ctx.constant(valid_mask(lengths, t));
    let before = linear(ctx, h, "speech_decoder_postnet.mel");
    let stop = linear(ctx, h, "speech_decoder_postnet.stop").reshape(&[b, t]);
    let k = cfg.postnet_kernel;
    let pad = (k / 2, k / 2);
    let mut r = before;
    for i in 0..cfg.postnet_layers {
        let p = format!("speech_decoder_postnet.conv{i}");
        r = r.conv1d(ctx.p(&format!("{p}.w")), k, 1, pad) + ctx.p(&format!("{p}.b"));
        if i + 1 < cfg.postnet_layers {
            r = dropout(ctx, r.tanh(), cfg.dropout);
        }
    }
    MelOutput {
        before,
        after: before + r,
        stop,
    }
}

/// Unit logits for masked prediction, `[batch, frames, unit_count]`.
pub fn mlm_logits<'g>(ctx: &Ctx<'g>, h: Var<'g>) -> Var<'g> {
    linear(ctx, h, "heads.mlm")
}

/// Per-frame symbol logits for CTC, `[batch, frames, vocab]` (blank included).
pub fn ctc_logits<'g>(ctx: &Ctx<'g>, h: Var<'g>) -> Var<'g> {
    linear(ctx, h, "heads.ctc")
}

/// Result of snapping vectors onto the grouped codebook.
pub struct Quantized<'g> {
    /// Same shape as the input; each group slice is a codebook entry.
    pub vectors: Var<'g>,
    /// `[rows][groups]` chosen entry indices.
    pub indices: Vec<Vec<usize>>,
    /// Per group, `[rows, entries]` soft assignment probabilities.
    pub soft: Vec<Var<'g>>,
}

/// Nearest-entry quantization per group with a straight-through gradient.
///
/// Soft probabilities are `softmax(−‖x − e‖² / tau)`; the forward value is
/// exactly the chosen entry, the backward pass follows the soft weights.
pub fn quantize<'g>(ctx: &Ctx<'g>, cfg: &ModelConfig, x: Var<'g>, tau: f64) -> Result<Quantized<'g>, ModelError> {
    let shape = x.shape();
    let d = *shape.last().unwrap_or(&0);
    if d != cfg.d_model {
        return Err(ModelError::DimMismatch {
            expected: cfg.d_model,
            found: d,
        });
    }
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let (g, v, dg) = (cfg.codebook_groups, cfg.codebook_entries, cfg.group_dim());
    let flat = x.reshape(&[rows, d]);
    let book = ctx.p("codebook.entries");
    let mut parts = Vec::with_capacity(g);
    let mut soft = Vec::with_capacity(g);
    let mut indices = vec![Vec::with_capacity(g); rows];
    for gi in 0..g {
        let xg = flat.narrow(1, gi * dg, dg);
        let eg = book.narrow(0, gi * v, v);
        let x2 = xg.sqr().sum_last().reshape(&[rows, 1]);
        let e2 = eg.sqr().sum_last();
        let neg_dist = xg.matmul_t(eg).scale(2.0) - x2 - e2;
        let probs = neg_dist.scale(1.0 / tau).softmax();
        let nd = neg_dist.value();
        let mut onehot = Tensor::zeros(&[rows, v]);
        for (r, idx) in indices.iter_mut().enumerate() {
            let row = nd.row(r);
            let mut best = 0;
            for j in 1..v {
                if row[j] > row[best] {
                    best = j;
                }
            }
            onehot.data_mut()[r * v + best] = 1.0;
            idx.push(best);
        }
        // exact one-hot forward, soft backward
        let st = ctx.constant(onehot) + (probs - probs.detach());
        parts.push(st.matmul(eg));
        soft.push(probs);
    }
    let q = ctx.graph.concat(&parts, 1).reshape(&shape);
    Ok(Quantized {
        vectors: q,
        indices,
        soft,
    })
}
