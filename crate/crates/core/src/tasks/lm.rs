//! Decoder-only character language model over the shared tokenizer.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sawt_tensor::{Graph, Var};
use serde::{Deserialize, Serialize};

use super::decode::LanguageModel;
use super::TaskError;
use crate::model::nn::{block, causal_bias, dropout, key_padding_bias, linear, norm, sinusoid};
use crate::model::{Archive, Ctx, ModelError, ParamStore, Specs};
use crate::pretrain::losses::text_dae_loss;
use crate::pretrain::{Adam, AdamConfig, LrSchedule};
use crate::prep::pad_ids;
use crate::seed::child_seed;
use crate::text::Special;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub vocab_size: usize,
}

impl LmConfig {
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            d_model: 32,
            n_heads: 2,
            layers: 1,
            ffn_dim: 64,
            dropout: 0.0,
            vocab_size,
        }
    }

    pub fn paper(vocab_size: usize) -> Self {
        Self {
            d_model: 512,
            n_heads: 8,
            layers: 6,
            ffn_dim: 2048,
            dropout: 0.1,
            vocab_size,
        }
    }

    fn specs(&self) -> Specs {
        let mut s = Specs::default();
        s.embedding("lm.embed", self.vocab_size, self.d_model);
        for l in 0..self.layers {
            s.block(&format!("lm.layer{l}"), self.d_model, self.ffn_dim, false);
        }
        s.norm("lm.ln", self.d_model);
        s.linear("lm.out", self.d_model, self.vocab_size);
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub lr: f64,
    pub warmup_updates: u64,
    pub updates: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            warmup_updates: 4000,
            updates: 300_000,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl LmTrainConfig {
    pub fn toy() -> Self {
        Self {
            lr: 3e-3,
            warmup_updates: 20,
            updates: 300,
            batch_size: 8,
            ..Self::default()
        }
    }
}

pub struct CharLm {
    pub config: LmConfig,
    pub params: ParamStore,
}

/// `bos + ids` inputs, `ids + eos` targets.
fn shifted(seqs: &[&[u32]]) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let inputs = seqs
        .iter()
        .map(|s| std::iter::once(Special::Bos.id()).chain(s.iter().copied()).collect())
        .collect();
    let targets = seqs
        .iter()
        .map(|s| s.iter().copied().chain(std::iter::once(Special::Eos.id())).collect())
        .collect();
    (inputs, targets)
}

impl CharLm {
    pub fn new(config: LmConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, "lm-init"));
        let params = ParamStore::from_specs(&config.specs().0, &mut rng);
        Self { config, params }
    }

    /// Next-symbol logits after every position, `[batch, width, vocab]`.
    pub fn logits<'g>(&self, ctx: &Ctx<'g>, ids: &[u32], batch: usize, lengths: &[usize]) -> Result<Var<'g>, ModelError> {
        let c = &self.config;
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= c.vocab_size) {
            return Err(ModelError::InvalidId(bad));
        }
        let width = ids.len() / batch.max(1);
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let x = ctx
            .graph
            .gather_rows(ctx.p("lm.embed"), &rows)
            .reshape(&[batch, width, c.d_model])
            .scale((c.d_model as f64).sqrt());
        let x = dropout(ctx, x + ctx.constant(sinusoid(width, c.d_model)), c.dropout);
        // causal plus key padding
        let bias = ctx.constant(causal_bias(width)) + ctx.constant(key_padding_bias(lengths, width));
        let mut h = x;
        for l in 0..c.layers {
            h = block(ctx, h, Some(bias), None, &format!("lm.layer{l}"), c.n_heads, c.dropout);
        }
        Ok(linear(ctx, norm(ctx, h, "lm.ln"), "lm.out"))
    }

    /// Mean next-symbol cross-entropy over `seqs`, each scored with an end symbol.
    pub fn loss<'g>(&self, ctx: &Ctx<'g>, seqs: &[&[u32]]) -> Result<Var<'g>, TaskError> {
        let (inputs, targets) = shifted(seqs);
        let (ids, _, lengths) = pad_ids(&inputs.iter().map(Vec::as_slice).collect::<Vec<_>>(), Special::Pad.id());
        let (tgt, _, _) = pad_ids(&targets.iter().map(Vec::as_slice).collect::<Vec<_>>(), Special::Pad.id());
        let logits = self.logits(ctx, &ids, seqs.len(), &lengths)?;
        text_dae_loss(ctx, logits, &tgt, &lengths).map_err(|e| TaskError::Shape(e.to_string()))
    }

    /// `exp` of the mean per-symbol negative log-likelihood, end symbols included.
    pub fn perplexity(&self, seqs: &[&[u32]]) -> Result<f64, TaskError> {
        let (mut nll, mut count) = (0.0, 0usize);
        for s in seqs {
            let g = Graph::new();
            let ctx = Ctx::eval(&g, &self.params);
            let n = s.len() + 1;
            nll += self.loss(&ctx, &[s])?.item() * n as f64;
            count += n;
        }
        Ok((nll / count.max(1) as f64).exp())
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut a = Archive::new(serde_json::json!({"kind": "char_lm", "config": self.config}));
        for (name, t) in self.params.iter() {
            a.push(name, t.clone());
        }
        a.save(path)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let a = Archive::load(path)?;
        if a.meta["kind"] != "char_lm" {
            return Err(ModelError::BadCheckpoint("not a language-model archive".into()));
        }
        let config: LmConfig = serde_json::from_value(a.meta["config"].clone())
            .map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        let mut params = ParamStore::new();
        for spec in config.specs().0 {
            let t = a
                .get(&spec.name)
                .ok_or_else(|| ModelError::BadCheckpoint(format!("missing {}", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(ModelError::BadCheckpoint(format!("{}: shape {:?}", spec.name, t.shape())));
            }
            params.insert(&spec.name, t.clone());
        }
        Ok(Self { config, params })
    }
}

impl LanguageModel for CharLm {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64> {
        let ids: Vec<u32> = std::iter::once(Special::Bos.id()).chain(prefix.iter().copied()).collect();
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &self.params);
        let n = ids.len();
        let out = self
            .logits(&ctx, &ids, 1, &[n])
            .expect("prefix ids come from the same vocabulary")
            .narrow(1, n - 1, 1)
            .log_softmax()
            .value();
        out.data().to_vec()
    }

    fn end_id(&self) -> u32 {
        Special::Eos.id()
    }
}

/// Fit a fresh language model to `corpus` (already tokenized) and return it
/// with the per-update training losses.
pub fn train_char_lm(corpus: &[Vec<u32>], config: LmConfig, tc: &LmTrainConfig) -> Result<(CharLm, Vec<f64>), TaskError> {
    if let Some(&bad) = corpus.iter().flatten().find(|&&i| i as usize >= config.vocab_size) {
        return Err(TaskError::VocabMismatch {
            expected: config.vocab_size,
            found: bad as usize + 1,
        });
    }
    if corpus.is_empty() {
        return Err(TaskError::EmptyBatch);
    }
    let mut lm = CharLm::new(config, tc.seed);
    let mut adam = Adam::default();
    let schedule = LrSchedule {
        peak: tc.lr,
        warmup: tc.warmup_updates,
    };
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(tc.seed, "lm-batches"));
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(tc.updates as usize);
    for step in 1..=tc.updates {
        let mut batch = Vec::with_capacity(tc.batch_size);
        while batch.len() < tc.batch_size.min(corpus.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(corpus[order[cursor]].as_slice());
            cursor += 1;
        }
        let grads = {
            let g = Graph::new();
            let ctx = Ctx::new(&g, &lm.params, true, child_seed(tc.seed, "lm-dropout") ^ step);
            let loss = lm.loss(&ctx, &batch)?;
            if !loss.item().is_finite() {
                return Err(TaskError::NonFiniteLoss {
                    term: "lm".into(),
                    step,
                });
            }
            losses.push(loss.item());
            ctx.gradients(loss)
        };
        adam.step(&mut lm.params, &grads, schedule.at(step), &tc.adam);
    }
    Ok((lm, losses))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn next_symbol_distribution_sums_to_one() {
        let lm = CharLm::new(LmConfig::toy(10), 1);
        let p: f64 = lm.next_log_probs(&[6, 7]).iter().map(|v| v.exp()).sum();
        assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn untrained_perplexity_is_near_vocab_size() {
        let lm = CharLm::new(LmConfig::toy(12), 2);
        let ppl = lm.perplexity(&[&[6, 7, 8, 9], &[10, 11]]).unwrap();
        assert!(ppl > 6.0 && ppl < 24.0, "{ppl}");
    }

    #[test]
    fn prediction_is_causal() {
        let lm = CharLm::new(LmConfig::toy(10), 3);
        let g = Graph::new();
        let ctx = Ctx::eval(&g, &lm.params);
        let a = lm.logits(&ctx, &[1, 6, 7, 8], 1, &[4]).unwrap().value();
        let b = lm.logits(&ctx, &[1, 6, 9, 9], 1, &[4]).unwrap().value();
        assert_eq!(a.data()[..20], b.data()[..20]);
    }

    #[test]
    fn out_of_vocabulary_corpus_is_rejected() {
        let err = train_char_lm(&[vec![6, 50]], LmConfig::toy(10), &LmTrainConfig::toy());
        assert!(matches!(err, Err(TaskError::VocabMismatch { .. })));
    }
}
