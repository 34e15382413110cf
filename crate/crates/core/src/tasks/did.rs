use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sawt_tensor::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{check_batch, encode_speech, update, FinetuneConfig, FinetuneReport, TaskError, Terms};
use crate::audio::Waveform;
use crate::model::net::{decoder, text_decoder_postnet, text_decoder_prenet};
use crate::model::{resize_vocab, Ctx, Model};
use crate::pretrain::TrainState;
use crate::prep::SpeechItem;
use crate::seed::child_seed;
use crate::text::{Special, Tokenizer};

pub fn dialect_symbol(label: &str) -> String {
    format!("<dialect:{label}>")
}

/// Dialect labels and the tokenizer ids that stand for them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialectMap {
    pub labels: Vec<String>,
    pub ids: Vec<u32>,
}

impl DialectMap {
    pub fn index_of(&self, label: &str) -> Result<usize, TaskError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| TaskError::UnknownDialectLabel(label.to_string()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Append one symbol per label to `tok` (existing ids untouched) and grow
/// every vocabulary-sized table of `model` to match.
pub fn add_dialect_labels(model: &mut Model, tok: &mut Tokenizer, labels: &[String], seed: u64) -> DialectMap {
    let symbols: Vec<String> = labels.iter().map(|l| dialect_symbol(l)).collect();
    tok.extend(symbols.iter().cloned());
    let ids = symbols
        .iter()
        .map(|s| tok.id_of(s).expect("symbol was just added"))
        .collect();
    if tok.len() > model.config.vocab_size {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, "dialect-rows"));
        resize_vocab(&mut model.params, &mut model.config, tok.len(), &mut rng);
    }
    DialectMap {
        labels: labels.to_vec(),
        ids,
    }
}

/// First decoder step given `bos`, restricted to the dialect ids: `[batch, n_dialects]`.
fn dialect_logits<'g>(ctx: &Ctx<'g>, model: &Model, waves: &[&Waveform], map: &DialectMap) -> Result<Var<'g>, TaskError> {
    let mc = &model.config;
    let b = waves.len();
    let (h, frames) = encode_speech(ctx, model, waves)?;
    let y = text_decoder_prenet(ctx, mc, &vec![Special::Bos.id(); b], b)?;
    let logits = text_decoder_postnet(ctx, decoder(ctx, mc, y, h, &frames)).reshape(&[b, mc.vocab_size]);
    let n = map.len();
    let mut select = Tensor::zeros(&[mc.vocab_size, n]);
    for (j, &id) in map.ids.iter().enumerate() {
        select.data_mut()[id as usize * n + j] = 1.0;
    }
    Ok(logits.matmul(ctx.constant(select)))
}

/// Cross-entropy of the first-step dialect posterior. `labels[i]` indexes `map`.
pub fn did_terms<'g>(
    ctx: &Ctx<'g>,
    model: &Model,
    batch: &[&SpeechItem],
    labels: &[usize],
    map: &DialectMap,
) -> Result<Terms<'g>, TaskError> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= map.len()) {
        return Err(TaskError::UnknownDialectLabel(format!("index {bad}")));
    }
    if labels.len() != batch.len() {
        return Err(TaskError::Shape(format!("{} labels for {} items", labels.len(), batch.len())));
    }
    let waves: Vec<&Waveform> = batch.iter().map(|s| &s.wave).collect();
    let logp = dialect_logits(ctx, model, &waves, map)?.log_softmax();
    let ce = logp.pick(labels).sum().scale(-1.0 / labels.len() as f64);
    Ok(vec![("ce", 1.0, ce)])
}

/// One update over [`did_terms`].
pub fn finetune_did_step(
    batch: &[&SpeechItem],
    labels: &[usize],
    map: &DialectMap,
    model: &mut Model,
    state: &mut TrainState,
    cfg: &FinetuneConfig,
) -> Result<FinetuneReport, TaskError> {
    check_batch(batch)?;
    update(model, state, cfg, "did", |ctx, model| did_terms(ctx, model, batch, labels, map))
}

/// Most likely dialect and the posterior over all labels in `map`.
pub fn classify_dialect(model: &Model, wave: &Waveform, map: &DialectMap) -> Result<(String, Vec<f64>), TaskError> {
    if map.is_empty() {
        return Err(TaskError::UnknownDialectLabel(String::new()));
    }
    let g = Graph::new();
    let ctx = Ctx::eval(&g, &model.params);
    let post = dialect_logits(&ctx, model, &[wave], map)?.softmax().value();
    let post = post.data().to_vec();
    let best = (0..post.len()).fold(0, |b, i| if post[i] > post[b] { i } else { b });
    Ok((map.labels[best].clone(), post))
}
