use rand::Rng;

/// Sorted, disjoint frame spans selected for masking.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    spans: Vec<(usize, usize)>,
    total_frames: usize,
}

impl MaskSpec {
    pub fn empty(total_frames: usize) -> Self {
        Self {
            spans: Vec::new(),
            total_frames,
        }
    }

    /// Spans from `(start, len)` pairs; panics unless sorted, disjoint and in bounds.
    pub fn from_spans(spans: Vec<(usize, usize)>, total_frames: usize) -> Self {
        let mut end = 0;
        for &(s, l) in &spans {
            assert!(l > 0 && s >= end && s + l <= total_frames, "invalid span ({s}, {l})");
            end = s + l;
        }
        Self { spans, total_frames }
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn n_masked(&self) -> usize {
        self.spans.iter().map(|s| s.1).sum()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.spans.iter().flat_map(|&(s, l)| s..s + l).collect()
    }

    /// Per-frame flags.
    pub fn to_bools(&self) -> Vec<bool> {
        let mut m = vec![false; self.total_frames];
        for i in self.indices() {
            m[i] = true;
        }
        m
    }
}

/// Each frame starts a span with probability `start_prob`; a span covers
/// `[i, i + span_len)` clipped at the sequence end.
///
/// Where spans overlap, each one is cut at the next start, so the masked set
/// is the union of all windows while every stored span stays within
/// `span_len`.
pub fn sample_mask_spans(total_frames: usize, span_len: usize, start_prob: f64, rng: &mut impl Rng) -> MaskSpec {
    let p = start_prob.clamp(0.0, 1.0);
    let starts: Vec<usize> = (0..total_frames).filter(|_| rng.gen::<f64>() < p).collect();
    let mut spans = Vec::with_capacity(starts.len());
    if span_len == 0 {
        return MaskSpec::empty(total_frames);
    }
    for (j, &s) in starts.iter().enumerate() {
        let next = starts.get(j + 1).copied().unwrap_or(usize::MAX);
        let end = (s + span_len).min(total_frames).min(next);
        spans.push((s, end - s));
    }
    MaskSpec { spans, total_frames }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_probability_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_mask_spans(100, 10, 0.0, &mut rng).is_empty());
    }

    #[test]
    fn clipped_at_sequence_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // probability 1 starts a span at every frame; the first covers frame 0 only
        let m = sample_mask_spans(5, 10, 1.0, &mut rng);
        assert_eq!(m.n_masked(), 5);
        assert_eq!(MaskSpec::from_spans(vec![(0, 5)], 5).indices(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn coverage_matches_union_of_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let t = rng.gen_range(1..80);
            let mut r1 = ChaCha8Rng::seed_from_u64(rng.gen());
            let mut r2 = r1.clone();
            let m = sample_mask_spans(t, 10, 0.1, &mut r1);
            let mut union = vec![false; t];
            for i in 0..t {
                if r2.gen::<f64>() < 0.1 {
                    for u in union.iter_mut().skip(i).take(10) {
                        *u = true;
                    }
                }
            }
            assert_eq!(m.to_bools(), union);
        }
    }

    proptest! {
        #[test]
        fn spans_sorted_disjoint_in_bounds(t in 1usize..400, seed: u64, p in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = sample_mask_spans(t, 10, p, &mut rng);
            let mut end = 0;
            for &(s, l) in m.spans() {
                prop_assert!(s >= end && l >= 1 && l <= 10 && s + l <= t);
                end = s + l;
            }
            prop_assert_eq!(m.indices().len(), m.n_masked());
        }
    }
}
