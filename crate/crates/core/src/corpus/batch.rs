use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::Waveform;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Speech,
    Text,
}

/// A loaded training item. Either side may be missing for unpaired data.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub wave: Option<Waveform>,
    pub tokens: Vec<u32>,
}

impl Example {
    fn len(&self, modality: Modality) -> Option<usize> {
        match modality {
            Modality::Speech => self.wave.as_ref().map(Waveform::len),
            Modality::Text => Some(self.tokens.len()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchConfig {
    /// Padded samples (speech) or symbols (text) per batch.
    pub budget: usize,
    pub max_speech_samples: usize,
    pub max_text_chars: usize,
    /// Items shuffled together before sorting by length.
    pub pool: usize,
}

impl BatchConfig {
    pub fn new(budget: usize) -> Self {
        assert!(budget > 0, "batch budget must be positive");
        Self {
            budget,
            max_speech_samples: 250_000,
            max_text_chars: 600,
            pool: 64,
        }
    }

    fn cap(&self, modality: Modality) -> usize {
        match modality {
            Modality::Speech => self.max_speech_samples,
            Modality::Text => self.max_text_chars,
        }
    }
}

/// Index lists for one epoch plus the items rejected by the caps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
    pub skipped: Vec<usize>,
}

/// Right-padded batch of one modality. `indices` point into the example slice.
#[derive(Clone, Debug)]
pub struct Batch {
    pub modality: Modality,
    pub indices: Vec<usize>,
    pub lengths: Vec<usize>,
    pub width: usize,
    /// `len × width` samples for speech batches, empty otherwise.
    pub samples: Vec<f32>,
    /// `len × width` ids (pad 0) for text batches, empty otherwise.
    pub tokens: Vec<u32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Row-major validity flags, `true` inside each item.
    pub fn padding_mask(&self) -> Vec<bool> {
        self.lengths
            .iter()
            .flat_map(|&l| (0..self.width).map(move |t| t < l))
            .collect()
    }
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(epoch);
    r
}

/// Length-bucketed, budget-capped batches for one epoch.
///
/// Items are shuffled, then sorted by length inside pools of `cfg.pool`,
/// packed greedily while `count × longest ≤ budget`, and the batch order is
/// shuffled again. Items over the modality cap (or lacking that modality)
/// are skipped with a warning.
pub fn plan_batches(lengths: &[Option<usize>], modality: Modality, cfg: &BatchConfig, seed: u64, epoch: u64) -> BatchPlan {
    let cap = cfg.cap(modality);
    let mut skipped = Vec::new();
    let mut order = Vec::new();
    for (i, l) in lengths.iter().enumerate() {
        match l {
            Some(l) if *l <= cap => order.push(i),
            Some(l) => {
                log::warn!("skipping item {i}: length {l} exceeds the {modality:?} cap of {cap}");
                skipped.push(i);
            }
            None => skipped.push(i),
        }
    }
    let mut rng = epoch_rng(seed, epoch);
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    for pool in order.chunks_mut(cfg.pool.max(1)) {
        pool.sort_by_key(|&i| lengths[i]);
        let mut cur: Vec<usize> = Vec::new();
        let mut longest = 0;
        for &i in pool.iter() {
            let l = lengths[i].unwrap_or(0).max(1);
            let width = longest.max(l);
            if !cur.is_empty() && (cur.len() + 1) * width > cfg.budget {
                batches.push(std::mem::take(&mut cur));
                longest = 0;
            }
            longest = longest.max(l);
            cur.push(i);
        }
        if !cur.is_empty() {
            batches.push(cur);
        }
    }
    batches.shuffle(&mut rng);
    BatchPlan { batches, skipped }
}

/// Endless batch stream over successive epochs, each planned with
/// [`plan_batches`]. Replaying `n` calls from a fresh cursor reproduces the
/// same `n` batches, which is how training resumes.
#[derive(Clone, Debug)]
pub struct BatchCursor {
    lengths: Vec<Option<usize>>,
    modality: Modality,
    cfg: BatchConfig,
    seed: u64,
    epoch: u64,
    plan: Vec<Vec<usize>>,
    next: usize,
}

impl BatchCursor {
    pub fn new(lengths: Vec<Option<usize>>, modality: Modality, cfg: BatchConfig, seed: u64) -> Self {
        let plan = plan_batches(&lengths, modality, &cfg, seed, 0).batches;
        Self {
            lengths,
            modality,
            cfg,
            seed,
            epoch: 0,
            plan,
            next: 0,
        }
    }

    /// Index list of the next batch, or `None` when no item fits the caps.
    pub fn next_batch(&mut self) -> Option<Vec<usize>> {
        if self.plan.is_empty() {
            return None;
        }
        if self.next == self.plan.len() {
            self.epoch += 1;
            self.plan = plan_batches(&self.lengths, self.modality, &self.cfg, self.seed, self.epoch).batches;
            self.next = 0;
        }
        self.next += 1;
        Some(self.plan[self.next - 1].clone())
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

/// Batches of `examples` for `epoch`; see [`plan_batches`].
pub fn batch_iter<'a>(
    examples: &'a [Example],
    modality: Modality,
    cfg: &BatchConfig,
    seed: u64,
    epoch: u64,
) -> (BatchPlan, impl Iterator<Item = Batch> + 'a) {
    let lengths: Vec<Option<usize>> = examples.iter().map(|e| e.len(modality)).collect();
    let plan = plan_batches(&lengths, modality, cfg, seed, epoch);
    let batches = plan.batches.clone();
    let iter = batches.into_iter().map(move |indices| collate(examples, modality, indices));
    (plan, iter)
}

fn collate(examples: &[Example], modality: Modality, indices: Vec<usize>) -> Batch {
    let lengths: Vec<usize> = indices.iter().map(|&i| examples[i].len(modality).unwrap_or(0)).collect();
    let width = lengths.iter().copied().max().unwrap_or(0);
    let mut batch = Batch {
        modality,
        lengths,
        width,
        samples: Vec::new(),
        tokens: Vec::new(),
        indices,
    };
    for &i in &batch.indices {
        match modality {
            Modality::Speech => {
                let s = examples[i].wave.as_ref().map(Waveform::samples).unwrap_or(&[]);
                batch.samples.extend_from_slice(s);
                batch.samples.resize(batch.samples.len() + width - s.len(), 0.0);
            }
            Modality::Text => {
                let t = &examples[i].tokens;
                batch.tokens.extend_from_slice(t);
                batch.tokens.resize(batch.tokens.len() + width - t.len(), 0);
            }
        }
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;

    fn speech(id: &str, n: usize) -> Example {
        Example {
            id: id.into(),
            wave: Some(Waveform::new(vec![0.1; n])),
            tokens: vec![7; 3],
        }
    }

    #[test]
    fn over_cap_items_skipped() {
        let ex = vec![speech("long", 16 * 16000), speech("ok", 16000)];
        let (plan, batches) = batch_iter(&ex, Modality::Speech, &BatchConfig::new(1 << 30), 0, 0);
        assert_eq!(plan.skipped, vec![0]);
        assert_eq!(batches.count(), 1);

        let text = vec![
            Example { id: "t".into(), wave: None, tokens: vec![6; 601] },
            Example { id: "u".into(), wave: None, tokens: vec![6; 600] },
        ];
        let (plan, _) = batch_iter(&text, Modality::Text, &BatchConfig::new(1 << 20), 0, 0);
        assert_eq!(plan.skipped, vec![0]);
        assert_eq!(plan.batches, vec![vec![1]]);
    }

    #[test]
    fn two_items_one_batch_with_mask() {
        let ex = vec![speech("a", 16000), speech("b", 12000)];
        let (_, batches) = batch_iter(&ex, Modality::Speech, &BatchConfig::new(1 << 20), 3, 0);
        let b: Vec<Batch> = batches.collect();
        assert_eq!(b.len(), 1);
        let b = &b[0];
        assert_eq!(b.len(), 2);
        assert_eq!(b.width, 16000);
        let mask = b.padding_mask();
        for (row, &i) in b.indices.iter().enumerate() {
            let len = ex[i].wave.as_ref().unwrap().len();
            assert_eq!(b.lengths[row], len);
            assert_eq!(mask[row * 16000..(row + 1) * 16000].iter().filter(|&&m| m).count(), len);
            assert!(b.samples[row * 16000 + len..(row + 1) * 16000].iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn every_item_once_and_deterministic() {
        let lengths: Vec<Option<usize>> = (0..300).map(|i| Some(1000 + (i * 7919) % 5000)).collect();
        let cfg = BatchConfig::new(20_000);
        for epoch in 0..3 {
            let plan = plan_batches(&lengths, Modality::Speech, &cfg, 9, epoch);
            let mut all: Vec<usize> = plan.batches.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..300).collect::<Vec<_>>());
            for b in &plan.batches {
                let w = b.iter().map(|&i| lengths[i].unwrap()).max().unwrap();
                assert!(b.len() == 1 || b.len() * w <= cfg.budget);
            }
            assert_eq!(plan, plan_batches(&lengths, Modality::Speech, &cfg, 9, epoch));
        }
        assert_ne!(
            plan_batches(&lengths, Modality::Speech, &cfg, 9, 0),
            plan_batches(&lengths, Modality::Speech, &cfg, 9, 1)
        );
    }
}
