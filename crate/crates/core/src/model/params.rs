use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sawt_tensor::Tensor;

use super::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform Glorot initialization for a `fan_in × fan_out` map.
    Glorot { fan_in: usize, fan_out: usize },
    Normal(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Named parameter arrays. Names are dotted paths whose first component is
/// the sub-network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_specs(specs: &[ParamSpec], rng: &mut impl Rng) -> Self {
        let mut store = Self::new();
        for s in specs {
            store.insert(&s.name, init_tensor(&s.shape, s.init, rng));
        }
        store
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Scalar counts per sub-network.
    pub fn group_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (name, t) in &self.tensors {
            *out.entry(group_of(name).to_string()).or_insert(0) += t.len();
        }
        out
    }

    /// Copy every entry of `other` whose name and shape match; returns the
    /// names copied.
    pub fn load_matching(&mut self, other: &ParamStore) -> Vec<String> {
        let mut copied = Vec::new();
        for (name, t) in &other.tensors {
            if let Some(dst) = self.tensors.get_mut(name) {
                if dst.shape() == t.shape() {
                    *dst = t.clone();
                    copied.push(name.clone());
                }
            }
        }
        copied
    }
}

pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

fn init_tensor(shape: &[usize], init: Init, rng: &mut impl Rng) -> Tensor {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, 1.0),
        Init::Glorot { fan_in, fan_out } => {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Tensor::from_fn(shape, |_| rng.gen_range(-a..a))
        }
        Init::Normal(std) => {
            let n = Normal::new(0.0, std).expect("finite std");
            Tensor::from_fn(shape, |_| n.sample(rng))
        }
    }
}

#[derive(Default)]
pub(crate) struct Specs(pub(crate) Vec<ParamSpec>);

impl Specs {
    pub(crate) fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    pub(crate) fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.push(format!("{prefix}.w"), vec![fan_in, fan_out], Init::Glorot { fan_in, fan_out });
        self.push(format!("{prefix}.b"), vec![fan_out], Init::Zeros);
    }

    fn conv(&mut self, prefix: &str, kernel: usize, cin: usize, cout: usize) {
        let (fi, fo) = (kernel * cin, kernel * cout);
        self.push(format!("{prefix}.w"), vec![kernel * cin, cout], Init::Glorot { fan_in: fi, fan_out: fo });
        self.push(format!("{prefix}.b"), vec![cout], Init::Zeros);
    }

    pub(crate) fn norm(&mut self, prefix: &str, d: usize) {
        self.push(format!("{prefix}.g"), vec![d], Init::Ones);
        self.push(format!("{prefix}.b"), vec![d], Init::Zeros);
    }

    fn attention(&mut self, prefix: &str, d: usize) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{prefix}.{p}"), d, d);
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, hidden: usize) {
        self.linear(&format!("{prefix}.fc1"), d, hidden);
        self.linear(&format!("{prefix}.fc2"), hidden, d);
    }

    pub(crate) fn embedding(&mut self, name: &str, rows: usize, d: usize) {
        self.push(name.to_string(), vec![rows, d], Init::Normal((d as f64).powf(-0.5)));
    }

    /// Pre-norm block: self-attention, optional cross-attention, feed-forward.
    pub(crate) fn block(&mut self, prefix: &str, d: usize, ffn: usize, cross: bool) {
        self.norm(&format!("{prefix}.ln1"), d);
        self.attention(&format!("{prefix}.self_attn"), d);
        if cross {
            self.norm(&format!("{prefix}.ln2"), d);
            self.attention(&format!("{prefix}.cross_attn"), d);
        }
        self.norm(&format!("{prefix}.ln3"), d);
        self.ffn(&format!("{prefix}.ffn"), d, ffn);
    }
}

/// Full parameter layout of the model; shapes depend only on `cfg`.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.d_model;
    let mut s = Specs::default();

    let mut cin = 1;
    for (i, &k) in cfg.conv_kernels.iter().enumerate() {
        s.conv(&format!("speech_encoder_prenet.conv{i}"), k, cin, cfg.conv_channels);
        cin = cfg.conv_channels;
    }
    s.linear("speech_encoder_prenet.proj", cfg.conv_channels, d);
    s.push("speech_encoder_prenet.mask_emb".into(), vec![d], Init::Normal(1.0));

    s.embedding("text_encoder_prenet.embed", cfg.vocab_size, d);

    for l in 0..cfg.enc_layers {
        s.block(&format!("encoder.layer{l}"), d, cfg.ffn_dim, false);
    }
    s.norm("encoder.ln", d);
    for l in 0..cfg.dec_layers {
        s.block(&format!("decoder.layer{l}"), d, cfg.ffn_dim, true);
    }
    s.norm("decoder.ln", d);

    s.embedding("text_decoder_prenet.embed", cfg.vocab_size, d);
    s.linear("text_decoder_postnet.out", d, cfg.vocab_size);

    let m = cfg.mel_bins;
    let p = cfg.speech_prenet_dim;
    s.linear("speech_decoder_prenet.fc1", m, p);
    s.linear("speech_decoder_prenet.fc2", p, p);
    s.linear("speech_decoder_prenet.proj", p, d);
    s.embedding("speech_decoder_prenet.speaker", cfg.n_speakers, d);

    s.linear("speech_decoder_postnet.mel", d, m * cfg.reduction_factor);
    s.linear("speech_decoder_postnet.stop", d, cfg.reduction_factor);
    let c = cfg.postnet_channels;
    for i in 0..cfg.postnet_layers {
        let cin = if i == 0 { m } else { c };
        let cout = if i + 1 == cfg.postnet_layers { m } else { c };
        s.conv(&format!("speech_decoder_postnet.conv{i}"), cfg.postnet_kernel, cin, cout);
    }

    s.push(
        "codebook.entries".into(),
        vec![cfg.codebook_groups * cfg.codebook_entries, cfg.group_dim()],
        Init::Normal(1.0),
    );

    s.linear("heads.mlm", d, cfg.unit_count);
    s.linear("heads.ctc", d, cfg.vocab_size);
    s.0
}

pub fn init_params(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamStore {
    ParamStore::from_specs(&param_specs(cfg), rng)
}

/// Total scalar count of `cfg`, without allocating.
pub fn count_params(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(|s| s.shape.iter().product::<usize>()).sum()
}

/// Per-group scalar counts of `cfg`, without allocating.
pub fn count_by_group(cfg: &ModelConfig) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for s in param_specs(cfg) {
        *out.entry(group_of(&s.name).to_string()).or_insert(0) += s.shape.iter().product::<usize>();
    }
    out
}

/// Grow every vocabulary-indexed array to `new_vocab` rows (or columns),
/// keeping existing entries and initializing new ones like fresh parameters.
pub fn resize_vocab(store: &mut ParamStore, cfg: &mut ModelConfig, new_vocab: usize, rng: &mut impl Rng) {
    assert!(new_vocab >= cfg.vocab_size, "vocabulary can only grow");
    let old = cfg.vocab_size;
    cfg.vocab_size = new_vocab;
    let fresh: BTreeMap<String, ParamSpec> = param_specs(cfg).into_iter().map(|s| (s.name.clone(), s)).collect();
    for name in [
        "text_encoder_prenet.embed",
        "text_decoder_prenet.embed",
        "text_decoder_postnet.out.w",
        "text_decoder_postnet.out.b",
        "heads.ctc.w",
        "heads.ctc.b",
    ] {
        let Some(t) = store.get(name).cloned() else { continue };
        let spec = &fresh[name];
        let mut grown = init_tensor(&spec.shape, spec.init, rng);
        let cols = spec.shape.last().copied().unwrap_or(1);
        match spec.shape.as_slice() {
            // vocab is the row axis of embeddings
            [_, d] if name.ends_with("embed") => grown.data_mut()[..old * d].copy_from_slice(t.data()),
            [rows, _] => {
                for r in 0..*rows {
                    grown.data_mut()[r * cols..r * cols + old].copy_from_slice(&t.data()[r * old..(r + 1) * old]);
                }
            }
            [_] => grown.data_mut()[..old].copy_from_slice(t.data()),
            _ => unreachable!("vocab arrays are 1-D or 2-D"),
        }
        store.insert(name, grown);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_matches_specs_and_is_finite() {
        let cfg = ModelConfig::toy(40);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let store = init_params(&cfg, &mut rng);
        assert_eq!(store.num_scalars(), count_params(&cfg));
        assert!(store.is_finite());
        assert_eq!(store.get("heads.ctc.w").unwrap().shape(), &[64, 40]);
        let groups = store.group_counts();
        assert_eq!(groups, count_by_group(&cfg));
        for g in ["speech_encoder_prenet", "encoder", "decoder", "codebook", "speech_decoder_postnet"] {
            assert!(groups[g] > 0);
        }
    }

    #[test]
    fn vocab_growth_keeps_old_entries() {
        let mut cfg = ModelConfig::tiny(10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let before = init_params(&cfg, &mut rng);
        let mut after = before.clone();
        resize_vocab(&mut after, &mut cfg, 13, &mut rng);
        let (e0, e1) = (before.get("text_encoder_prenet.embed").unwrap(), after.get("text_encoder_prenet.embed").unwrap());
        assert_eq!(e1.shape(), &[13, 8]);
        assert_eq!(&e1.data()[..80], e0.data());
        let (w0, w1) = (before.get("heads.ctc.w").unwrap(), after.get("heads.ctc.w").unwrap());
        assert_eq!(w1.shape(), &[8, 13]);
        for r in 0..8 {
            assert_eq!(&w1.data()[r * 13..r * 13 + 10], &w0.data()[r * 10..(r + 1) * 10]);
        }
        assert_eq!(after.num_scalars(), count_params(&cfg));
    }
}
