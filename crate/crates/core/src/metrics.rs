//! Word and character error rates and classification accuracy.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_text;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{refs} references but {hyps} hypotheses")]
    CountMismatch { refs: usize, hyps: usize },
    #[error("no hypothesis for utterance {0:?}")]
    MissingId(String),
    #[error("nothing to score")]
    Empty,
}

/// Minimal edit distance and one substitution/insertion/deletion split achieving it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

/// Unit-cost Levenshtein distance from `reference` to `hypothesis`.
/// Insertions are hypothesis tokens with no reference counterpart.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut cost = vec![0usize; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        cost[at(i, 0)] = i;
    }
    for j in 0..=m {
        cost[at(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = cost[at(i - 1, j - 1)] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            cost[at(i, j)] = sub.min(cost[at(i - 1, j)] + 1).min(cost[at(i, j - 1)] + 1);
        }
    }
    // walk back, preferring match/substitution, then deletion, then insertion
    let mut out = EditCounts {
        distance: cost[at(n, m)],
        ..EditCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let diff = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if cost[at(i, j)] == cost[at(i - 1, j - 1)] + diff {
                out.substitutions += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[at(i, j)] == cost[at(i - 1, j)] + 1 {
            out.deletions += 1;
            i -= 1;
        } else {
            out.insertions += 1;
            j -= 1;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Word,
    Char,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoreOptions {
    pub level: Level,
    /// Score the texts as given instead of normalizing both sides.
    pub raw: bool,
    /// Keep spaces in the character stream.
    pub char_spaces: bool,
}

impl ScoreOptions {
    pub fn new(level: Level) -> Self {
        Self {
            level,
            raw: false,
            char_spaces: true,
        }
    }
}

/// Corpus-level error rate: total edits over total reference tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub level: Level,
    pub error_rate: f64,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub n_ref_tokens: usize,
    pub n_utterances: usize,
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.level {
            Level::Word => "WER",
            Level::Char => "CER",
        };
        writeln!(f, "{:<6}{:>8}{:>8}{:>8}{:>8}{:>8}", name, "S", "I", "D", "N", "utts")?;
        write!(
            f,
            "{:<6}{:>8}{:>8}{:>8}{:>8}{:>8}",
            format!("{:.2}%", 100.0 * self.error_rate),
            self.substitutions,
            self.insertions,
            self.deletions,
            self.n_ref_tokens,
            self.n_utterances
        )
    }
}

fn tokens(text: &str, opts: &ScoreOptions) -> Vec<String> {
    let text = if opts.raw {
        text.split_whitespace().collect::<Vec<_>>().join(" ")
    } else {
        normalize_text(text).into_string()
    };
    match opts.level {
        Level::Word => text.split_whitespace().map(str::to_string).collect(),
        Level::Char => text
            .chars()
            .filter(|c| opts.char_spaces || *c != ' ')
            .map(String::from)
            .collect(),
    }
}

/// Score hypotheses against references, paired by utterance id.
pub fn score<S: AsRef<str>>(
    refs: &[(S, S)],
    hyps: &[(S, S)],
    opts: &ScoreOptions,
) -> Result<ScoreReport, MetricsError> {
    if refs.len() != hyps.len() {
        return Err(MetricsError::CountMismatch {
            refs: refs.len(),
            hyps: hyps.len(),
        });
    }
    let by_id: HashMap<&str, &str> = hyps.iter().map(|(id, h)| (id.as_ref(), h.as_ref())).collect();
    let mut report = ScoreReport {
        level: opts.level,
        error_rate: 0.0,
        substitutions: 0,
        insertions: 0,
        deletions: 0,
        n_ref_tokens: 0,
        n_utterances: refs.len(),
    };
    for (id, r) in refs {
        let h = by_id
            .get(id.as_ref())
            .ok_or_else(|| MetricsError::MissingId(id.as_ref().to_string()))?;
        let rt = tokens(r.as_ref(), opts);
        let e = edit_distance(&rt, &tokens(h, opts));
        report.substitutions += e.substitutions;
        report.insertions += e.insertions;
        report.deletions += e.deletions;
        report.n_ref_tokens += rt.len();
    }
    let edits = report.substitutions + report.insertions + report.deletions;
    report.error_rate = if report.n_ref_tokens == 0 {
        if edits == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        edits as f64 / report.n_ref_tokens as f64
    };
    Ok(report)
}

/// Exact-match fraction.
pub fn accuracy<T: PartialEq>(refs: &[T], hyps: &[T]) -> Result<f64, MetricsError> {
    if refs.len() != hyps.len() {
        return Err(MetricsError::CountMismatch {
            refs: refs.len(),
            hyps: hyps.len(),
        });
    }
    if refs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = refs.iter().zip(hyps).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / refs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    fn pairs(items: &[(&'static str, &'static str)]) -> Vec<(&'static str, &'static str)> {
        items.to_vec()
    }

    #[test]
    fn edit_counts_by_hand() {
        assert_eq!(edit_distance(&chars("abc"), &chars("abc")), EditCounts::default());
        let e = edit_distance(&chars("abc"), &chars("axc"));
        assert_eq!((e.distance, e.substitutions, e.insertions, e.deletions), (1, 1, 0, 0));
        let e = edit_distance(&chars("abc"), &chars("abxc"));
        assert_eq!((e.distance, e.insertions), (1, 1));
        let e = edit_distance(&chars("abc"), &chars("ac"));
        assert_eq!((e.distance, e.deletions), (1, 1));
    }

    #[test]
    fn word_error_rate_examples() {
        let opts = ScoreOptions::new(Level::Word);
        let r = score(&pairs(&[("a", "كتب الولد")]), &pairs(&[("a", "كتب ولد")]), &opts).unwrap();
        assert_eq!(r.error_rate, 0.5);
        let r = score(&pairs(&[("a", "كتب الولد")]), &pairs(&[("a", "كتب الولد")]), &opts).unwrap();
        assert_eq!(r.error_rate, 0.0);
        let r = score(&pairs(&[("a", "ذهب الولد مسرعا")]), &pairs(&[("a", "")]), &opts).unwrap();
        assert_eq!((r.error_rate, r.deletions), (1.0, 3));
    }

    #[test]
    fn char_level_counts_spaces_unless_told_not_to() {
        let mut opts = ScoreOptions::new(Level::Char);
        let refs = pairs(&[("a", "اب ت")]);
        let hyps = pairs(&[("a", "ابت")]);
        let r = score(&refs, &hyps, &opts).unwrap();
        assert_eq!((r.deletions, r.n_ref_tokens), (1, 4));
        opts.char_spaces = false;
        assert_eq!(score(&refs, &hyps, &opts).unwrap().error_rate, 0.0);
    }

    #[test]
    fn normalization_can_be_turned_off() {
        let refs = pairs(&[("a", "كَتَبَ")]);
        let hyps = pairs(&[("a", "كتب")]);
        let mut opts = ScoreOptions::new(Level::Word);
        assert_eq!(score(&refs, &hyps, &opts).unwrap().error_rate, 0.0);
        opts.raw = true;
        assert_eq!(score(&refs, &hyps, &opts).unwrap().error_rate, 1.0);
    }

    #[test]
    fn pairing_errors() {
        let opts = ScoreOptions::new(Level::Word);
        let e = score(&pairs(&[("a", "x")]), &pairs(&[]), &opts).unwrap_err();
        assert_eq!(e, MetricsError::CountMismatch { refs: 1, hyps: 0 });
        let e = score(&pairs(&[("a", "x")]), &pairs(&[("b", "x")]), &opts).unwrap_err();
        assert_eq!(e, MetricsError::MissingId("a".into()));
    }

    #[test]
    fn accuracy_extremes() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 3], &[2, 3, 1]).unwrap(), 0.0);
        assert!(accuracy::<u8>(&[], &[]).is_err());
    }

    #[test]
    fn random_guessing_over_many_classes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let refs: Vec<u32> = (0..10_000).map(|_| rng.gen_range(0..17)).collect();
        let hyps: Vec<u32> = (0..10_000).map(|_| rng.gen_range(0..17)).collect();
        let acc = accuracy(&refs, &hyps).unwrap();
        assert!((acc - 1.0 / 17.0).abs() < 0.01, "{acc}");
    }

    proptest! {
        #[test]
        fn split_reproduces_distance(a in "[abc]{0,8}", b in "[abc]{0,8}") {
            let e = edit_distance(&chars(&a), &chars(&b));
            prop_assert_eq!(e.distance, e.substitutions + e.insertions + e.deletions);
            prop_assert_eq!(
                a.chars().count() as i64 - e.deletions as i64 + e.insertions as i64,
                b.chars().count() as i64
            );
        }

        #[test]
        fn permuting_the_corpus_keeps_the_score(texts in proptest::collection::vec(("[ab ]{0,6}", "[ab ]{0,6}"), 1..6)) {
            let refs: Vec<(String, String)> = texts.iter().enumerate().map(|(i, t)| (i.to_string(), t.0.clone())).collect();
            let hyps: Vec<(String, String)> = texts.iter().enumerate().map(|(i, t)| (i.to_string(), t.1.clone())).collect();
            let mut rev = hyps.clone();
            rev.reverse();
            let opts = ScoreOptions::new(Level::Char);
            prop_assert_eq!(score(&refs, &hyps, &opts).unwrap(), score(&refs, &rev, &opts).unwrap());
        }

        #[test]
        fn renormalized_hypothesis_scores_zero(s in "\\PC{0,20}") {
            let refs = vec![("x".to_string(), s.clone())];
            let hyps = vec![("x".to_string(), normalize_text(&s).into_string())];
            let r = score(&refs, &hyps, &ScoreOptions::new(Level::Word)).unwrap();
            prop_assert_eq!(r.substitutions + r.insertions + r.deletions, 0);
        }
    }
}
