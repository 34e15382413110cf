//! Greedy and prefix-beam CTC decoding with optional shallow fusion.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Next-symbol distribution given a prefix. Returned values are natural
/// log-probabilities over the whole vocabulary.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;
    fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64>;
    /// Id scored once a hypothesis ends.
    fn end_id(&self) -> u32;
}

/// A decoded symbol sequence and its scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub ids: Vec<u32>,
    /// `acoustic + lm_weight · lm + length_bonus · ids.len()`.
    pub score: f64,
    pub acoustic: f64,
    pub lm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam { width: usize },
}

/// Language model attached to beam search.
pub struct Fusion<'a> {
    pub lm: &'a dyn LanguageModel,
    pub weight: f64,
    pub length_bonus: f64,
}

pub const DEFAULT_BEAM: usize = 5;
pub const DEFAULT_LM_WEIGHT: f64 = 0.3;

/// Decode `frames × symbols` log-probabilities. Greedy decoding ignores
/// `fusion`; a fusion weight of zero skips the language model entirely.
pub fn decode_ctc(
    log_probs: &[f64],
    symbols: usize,
    blank: u32,
    mode: DecodeMode,
    fusion: Option<&Fusion<'_>>,
) -> Hypothesis {
    match mode {
        DecodeMode::Greedy => greedy(log_probs, symbols, blank),
        DecodeMode::Beam { width } => {
            let fusion = fusion.filter(|f| f.weight != 0.0);
            let bonus = fusion.map_or(0.0, |f| f.length_bonus);
            prefix_beam(log_probs, symbols, blank, width.max(1), fusion, bonus)
        }
    }
}

fn greedy(log_probs: &[f64], symbols: usize, blank: u32) -> Hypothesis {
    let mut ids = Vec::new();
    let mut score = 0.0;
    let mut prev = None;
    for row in log_probs.chunks(symbols) {
        let (best, &lp) = row
            .iter()
            .enumerate()
            .fold((0, &row[0]), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
        let best = best as u32;
        score += lp;
        if Some(best) != prev && best != blank {
            ids.push(best);
        }
        prev = Some(best);
    }
    Hypothesis {
        ids,
        score,
        acoustic: score,
        lm: 0.0,
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Clone, Copy)]
struct Beam {
    blank: f64,
    nonblank: f64,
    lm: f64,
}

impl Beam {
    fn acoustic(&self) -> f64 {
        log_add(self.blank, self.nonblank)
    }
}

fn prefix_beam(
    log_probs: &[f64],
    symbols: usize,
    blank: u32,
    width: usize,
    fusion: Option<&Fusion<'_>>,
    bonus: f64,
) -> Hypothesis {
    let ninf = f64::NEG_INFINITY;
    let weight = fusion.map_or(0.0, |f| f.weight);
    let mut lm_cache: HashMap<Vec<u32>, Vec<f64>> = HashMap::new();
    let mut lm_next = |prefix: &[u32], c: u32| -> f64 {
        match fusion {
            None => 0.0,
            Some(f) => lm_cache.entry(prefix.to_vec()).or_insert_with(|| f.lm.next_log_probs(prefix))[c as usize],
        }
    };
    let rank = |p: &[u32], b: &Beam| b.acoustic() + weight * b.lm + bonus * p.len() as f64;

    let mut beams: Vec<(Vec<u32>, Beam)> = vec![(
        Vec::new(),
        Beam {
            blank: 0.0,
            nonblank: ninf,
            lm: 0.0,
        },
    )];
    for row in log_probs.chunks(symbols) {
        let mut next: HashMap<Vec<u32>, Beam> = HashMap::new();
        let mut order: Vec<Vec<u32>> = Vec::new();
        let mut entry = |next: &mut HashMap<Vec<u32>, Beam>, key: Vec<u32>, lm: f64| -> Vec<u32> {
            if !next.contains_key(&key) {
                order.push(key.clone());
                next.insert(
                    key.clone(),
                    Beam {
                        blank: ninf,
                        nonblank: ninf,
                        lm,
                    },
                );
            }
            key
        };
        for (prefix, beam) in &beams {
            let total = beam.acoustic();
            // stay on the prefix through a blank
            let k = entry(&mut next, prefix.clone(), beam.lm);
            let e = next.get_mut(&k).unwrap();
            e.blank = log_add(e.blank, total + row[blank as usize]);
            let last = prefix.last().copied();
            for c in 0..symbols as u32 {
                if c == blank {
                    continue;
                }
                let lp = row[c as usize];
                if Some(c) == last {
                    // repeat collapses unless separated by a blank
                    let e = next.get_mut(&k).unwrap();
                    e.nonblank = log_add(e.nonblank, beam.nonblank + lp);
                    let mut ext = prefix.clone();
                    ext.push(c);
                    let lm = beam.lm + lm_next(prefix, c);
                    let k2 = entry(&mut next, ext, lm);
                    let e = next.get_mut(&k2).unwrap();
                    e.nonblank = log_add(e.nonblank, beam.blank + lp);
                } else {
                    let mut ext = prefix.clone();
                    ext.push(c);
                    let lm = beam.lm + lm_next(prefix, c);
                    let k2 = entry(&mut next, ext, lm);
                    let e = next.get_mut(&k2).unwrap();
                    e.nonblank = log_add(e.nonblank, total + lp);
                }
            }
        }
        let mut ranked: Vec<(Vec<u32>, Beam)> = order.into_iter().map(|k| {
            let b = next[&k];
            (k, b)
        }).collect();
        // stable sort keeps first-seen order among ties
        ranked.sort_by(|a, b| rank(&b.0, &b.1).total_cmp(&rank(&a.0, &a.1)));
        ranked.truncate(width);
        beams = ranked;
    }

    let mut best: Option<Hypothesis> = None;
    for (prefix, beam) in beams {
        let lm = match fusion {
            Some(f) => beam.lm + f.lm.next_log_probs(&prefix)[f.lm.end_id() as usize],
            None => 0.0,
        };
        let acoustic = beam.acoustic();
        let score = acoustic + weight * lm + bonus * prefix.len() as f64;
        if best.as_ref().map_or(true, |b| score > b.score) {
            best = Some(Hypothesis {
                ids: prefix,
                score,
                acoustic,
                lm,
            });
        }
    }
    best.expect("beam is never empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_rows(path: &[u32], symbols: usize) -> Vec<f64> {
        let mut out = vec![(0.01f64).ln(); path.len() * symbols];
        for (t, &c) in path.iter().enumerate() {
            out[t * symbols + c as usize] = (1.0 - 0.01 * (symbols - 1) as f64).ln();
        }
        out
    }

    #[test]
    fn greedy_collapses_and_drops_blanks() {
        let lp = one_hot_rows(&[0, 1, 1, 0, 2], 3);
        assert_eq!(decode_ctc(&lp, 3, 0, DecodeMode::Greedy, None).ids, vec![1, 2]);
        let lp = one_hot_rows(&[1, 0, 1], 3);
        assert_eq!(decode_ctc(&lp, 3, 0, DecodeMode::Greedy, None).ids, vec![1, 1]);
    }

    #[test]
    fn width_one_matches_greedy_on_clear_input() {
        let lp = one_hot_rows(&[2, 2, 0, 1, 0, 1], 3);
        let g = decode_ctc(&lp, 3, 0, DecodeMode::Greedy, None);
        let b = decode_ctc(&lp, 3, 0, DecodeMode::Beam { width: 1 }, None);
        assert_eq!(g.ids, b.ids);
    }

    struct Fixed(Vec<f64>);

    impl LanguageModel for Fixed {
        fn vocab_size(&self) -> usize {
            self.0.len()
        }
        fn next_log_probs(&self, _: &[u32]) -> Vec<f64> {
            self.0.clone()
        }
        fn end_id(&self) -> u32 {
            0
        }
    }

    #[test]
    fn zero_weight_ignores_the_lm() {
        let lp = one_hot_rows(&[1, 2, 0, 2], 3);
        let lm = Fixed(vec![-1.0, -0.1, -5.0]);
        let f = Fusion {
            lm: &lm,
            weight: 0.0,
            length_bonus: 0.0,
        };
        let a = decode_ctc(&lp, 3, 0, DecodeMode::Beam { width: 4 }, Some(&f));
        let b = decode_ctc(&lp, 3, 0, DecodeMode::Beam { width: 4 }, None);
        assert_eq!(a, b);
    }

    #[test]
    fn score_decomposes() {
        let lp = one_hot_rows(&[1, 2, 0, 2], 3);
        let lm = Fixed(vec![-1.0, -0.5, -2.0]);
        let f = Fusion {
            lm: &lm,
            weight: 0.7,
            length_bonus: 0.25,
        };
        let h = decode_ctc(&lp, 3, 0, DecodeMode::Beam { width: 4 }, Some(&f));
        let want = h.acoustic + 0.7 * h.lm + 0.25 * h.ids.len() as f64;
        assert!((h.score - want).abs() < 1e-12);
    }
}
