use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::text::Special;

/// A span-masked copy of a token sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corrupted {
    pub input: Vec<u32>,
    pub original: Vec<u32>,
    pub masked: usize,
}

const MEAN_SPAN: f64 = 3.0;

/// Replace `round(rate · len)` tokens by the mask symbol, in contiguous
/// spans whose lengths are Poisson with mean 3 (at least 1).
pub fn corrupt_text(ids: &[u32], rate: f64, rng: &mut impl Rng) -> Corrupted {
    let n = ids.len();
    let target = ((rate.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut flags = vec![false; n];
    let mut masked = 0;
    let poisson = Poisson::new(MEAN_SPAN).expect("positive mean");
    let mut attempts = 0;
    while masked < target && attempts < 20 * n {
        attempts += 1;
        let len = (poisson.sample(rng) as usize).clamp(1, target - masked);
        let start = rng.gen_range(0..=n - len);
        for f in &mut flags[start..start + len] {
            if !*f && masked < target {
                *f = true;
                masked += 1;
            }
        }
    }
    // rare fallback when random spans keep landing on masked tokens
    for f in flags.iter_mut() {
        if masked >= target {
            break;
        }
        if !*f {
            *f = true;
            masked += 1;
        }
    }
    let input = ids
        .iter()
        .zip(&flags)
        .map(|(&id, &m)| if m { Special::Mask.id() } else { id })
        .collect();
    Corrupted {
        input,
        original: ids.to_vec(),
        masked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rate_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ids: Vec<u32> = (6..26).collect();
        let c = corrupt_text(&ids, 0.0, &mut rng);
        assert_eq!(c.input, ids);
        let c = corrupt_text(&ids, 1.0, &mut rng);
        assert!(c.input.iter().all(|&i| i == Special::Mask.id()));
        assert_eq!(c.original, ids);
        assert!(corrupt_text(&[], 0.3, &mut rng).input.is_empty());
    }

    #[test]
    fn masked_fraction_near_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut total = 0.0;
        for _ in 0..10_000 {
            let n = rng.gen_range(10..60);
            let ids = vec![7u32; n];
            let c = corrupt_text(&ids, 0.3, &mut rng);
            let m = c.input.iter().filter(|&&i| i == Special::Mask.id()).count();
            assert_eq!(m, c.masked);
            total += m as f64 / n as f64;
        }
        assert!((total / 10_000.0 - 0.3).abs() < 0.01);
    }

    #[test]
    fn deterministic_per_seed() {
        let ids: Vec<u32> = (6..40).collect();
        let a = corrupt_text(&ids, 0.3, &mut ChaCha8Rng::seed_from_u64(5));
        let b = corrupt_text(&ids, 0.3, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }
}
