use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_manifest, CorpusError, Utterance};
use crate::audio::{write_wave, Waveform, SAMPLE_RATE};
use crate::text::normalize_text;

/// Samples per rendered character (100 ms).
pub const CHAR_SAMPLES: usize = 1600;

const LOW_HZ: f64 = 300.0;
const HIGH_HZ: f64 = 7000.0;
const MIN_SPACING_HZ: f64 = 150.0;
const TONE_AMP: f64 = 0.5;
const FADE: usize = 80;
const BED_F0: f64 = 200.0;
const BED_AMP: f64 = 0.006;

#[derive(Clone, Debug)]
pub struct ToyConfig {
    pub seed: u64,
    pub n_utts: usize,
    pub alphabet: Vec<char>,
    pub n_dialects: usize,
    pub min_chars: usize,
    pub max_chars: usize,
}

impl ToyConfig {
    pub fn new(seed: u64, n_utts: usize) -> Self {
        Self {
            seed,
            n_utts,
            alphabet: default_alphabet(),
            n_dialects: 1,
            min_chars: 2,
            max_chars: 5,
        }
    }

    pub fn with_dialects(mut self, n: usize) -> Self {
        self.n_dialects = n.max(1);
        self
    }

    pub fn dialect_name(d: usize) -> String {
        format!("d{d}")
    }
}

/// Eight Arabic letters.
pub fn default_alphabet() -> Vec<char> {
    "ابتثجحخد".chars().collect()
}

/// Frequency of the `index`-th of `n` characters, evenly spaced over 300–7000 Hz.
pub fn tone_frequency(index: usize, n: usize) -> f64 {
    if n <= 1 {
        return LOW_HZ;
    }
    LOW_HZ + index as f64 * (HIGH_HZ - LOW_HZ) / (n - 1) as f64
}

fn tilt(dialect: usize, n_dialects: usize) -> f64 {
    if n_dialects <= 1 {
        0.0
    } else {
        -2.0 + 4.0 * dialect as f64 / (n_dialects - 1) as f64
    }
}

/// A steady harmonic bed on a 200 Hz grid whose spectral slope encodes the
/// dialect. The period divides the hop, so every frame sees the same bed.
fn bed_sample(t: usize, slope: f64) -> f64 {
    let time = t as f64 / f64::from(SAMPLE_RATE);
    let n = (7900.0 / BED_F0) as usize;
    (1..=n)
        .map(|k| {
            let f = BED_F0 * k as f64;
            let amp = BED_AMP * (slope * (f / 4000.0 - 1.0)).exp();
            // Schroeder phases keep the crest factor low.
            let phase = PI * (k * k) as f64 / n as f64;
            amp * (2.0 * PI * f * time + phase).sin()
        })
        .sum()
}

/// Render `text` as consecutive 100 ms tones, one frequency per alphabet
/// symbol, over the bed of `dialect`. Characters outside the alphabet are
/// silent.
pub fn render_text(text: &str, alphabet: &[char], dialect: usize, n_dialects: usize) -> Waveform {
    assert!(
        alphabet.len() <= 1 + ((HIGH_HZ - LOW_HZ) / MIN_SPACING_HZ) as usize,
        "alphabet too large for 150 Hz tone spacing"
    );
    let chars: Vec<char> = text.chars().collect();
    let slope = tilt(dialect, n_dialects);
    let mut samples = Vec::with_capacity(chars.len() * CHAR_SAMPLES);
    for (ci, c) in chars.iter().enumerate() {
        let freq = alphabet.iter().position(|a| a == c).map(|i| tone_frequency(i, alphabet.len()));
        for j in 0..CHAR_SAMPLES {
            let t = ci * CHAR_SAMPLES + j;
            let mut v = bed_sample(t, slope);
            if let Some(f) = freq {
                let edge = j.min(CHAR_SAMPLES - 1 - j);
                let env = if edge < FADE {
                    0.5 - 0.5 * (PI * edge as f64 / FADE as f64).cos()
                } else {
                    1.0
                };
                v += TONE_AMP * env * (2.0 * PI * f * j as f64 / f64::from(SAMPLE_RATE)).sin();
            }
            samples.push(v as f32);
        }
    }
    Waveform::new(samples)
}

/// Deterministic in-memory corpus. Audio paths are relative file names and
/// waveforms are unquantized.
pub fn toy_corpus(cfg: &ToyConfig) -> Vec<(Utterance, Waveform)> {
    assert!(!cfg.alphabet.is_empty() && cfg.min_chars >= 1 && cfg.min_chars <= cfg.max_chars);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_utts)
        .map(|i| {
            let len = rng.gen_range(cfg.min_chars..=cfg.max_chars);
            let text: String = (0..len).map(|_| cfg.alphabet[rng.gen_range(0..cfg.alphabet.len())]).collect();
            let dialect = i % cfg.n_dialects.max(1);
            let wave = render_text(&text, &cfg.alphabet, dialect, cfg.n_dialects);
            let id = format!("toy-{i:04}");
            let utt = Utterance {
                audio: PathBuf::from(format!("{id}.wav")),
                id,
                duration: wave.duration(),
                text_norm: normalize_text(&text),
                text_raw: text,
                dialect: (cfg.n_dialects > 1).then(|| ToyConfig::dialect_name(dialect)),
                overlap: false,
            };
            (utt, wave)
        })
        .collect()
}

/// Write the corpus as 16-bit WAVs plus `manifest.jsonl` under `dir`.
pub fn make_toy_corpus(cfg: &ToyConfig, dir: &Path) -> Result<Vec<Utterance>, CorpusError> {
    std::fs::create_dir_all(dir)?;
    let mut utts = Vec::with_capacity(cfg.n_utts);
    for (mut utt, wave) in toy_corpus(cfg) {
        utt.audio = dir.join(&utt.audio);
        write_wave(&utt.audio, &wave)?;
        utts.push(utt);
    }
    write_manifest(&utts, &dir.join("manifest.jsonl"))?;
    Ok(utts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{load_wave, log_mel, MelConfig};

    /// Strongest frequency of `x` by direct DFT on a 10 Hz grid.
    fn dominant_hz(x: &[f32]) -> f64 {
        let mut best = (0.0, 0.0);
        let mut f = 100.0;
        while f < 7900.0 {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &v) in x.iter().enumerate() {
                let a = 2.0 * PI * f * n as f64 / f64::from(SAMPLE_RATE);
                re += f64::from(v) * a.cos();
                im += f64::from(v) * a.sin();
            }
            let p = re * re + im * im;
            if p > best.1 {
                best = (f, p);
            }
            f += 10.0;
        }
        best.0
    }

    #[test]
    fn frequencies_are_injective_and_spaced() {
        let a = default_alphabet();
        for i in 1..a.len() {
            assert!(tone_frequency(i, a.len()) - tone_frequency(i - 1, a.len()) >= MIN_SPACING_HZ);
        }
    }

    #[test]
    fn two_chars_two_tones_in_order() {
        let a = default_alphabet();
        let w = render_text("اب", &a, 0, 1);
        assert_eq!(w.len(), 3200);
        let f0 = dominant_hz(&w.samples()[..CHAR_SAMPLES]);
        let f1 = dominant_hz(&w.samples()[CHAR_SAMPLES..]);
        assert!((f0 - tone_frequency(0, a.len())).abs() <= 10.0, "{f0}");
        assert!((f1 - tone_frequency(1, a.len())).abs() <= 10.0, "{f1}");
    }

    #[test]
    fn transcripts_recoverable_from_audio() {
        let cfg = ToyConfig::new(5, 20).with_dialects(3);
        for (utt, wave) in toy_corpus(&cfg) {
            let decoded: String = wave
                .samples()
                .chunks(CHAR_SAMPLES)
                .map(|seg| {
                    let f = dominant_hz(seg);
                    let i = (0..cfg.alphabet.len())
                        .min_by(|&a, &b| {
                            let da = (tone_frequency(a, cfg.alphabet.len()) - f).abs();
                            let db = (tone_frequency(b, cfg.alphabet.len()) - f).abs();
                            da.partial_cmp(&db).unwrap()
                        })
                        .unwrap();
                    cfg.alphabet[i]
                })
                .collect();
            assert_eq!(decoded, utt.text_raw);
        }
    }

    #[test]
    fn dialects_spectrally_separable() {
        let cfg = ToyConfig::new(2, 30).with_dialects(3);
        let mel_cfg = MelConfig::default();
        let mut means = vec![vec![0.0; 80]; 3];
        let mut per_utt = Vec::new();
        let mut counts = [0usize; 3];
        for (i, (_, wave)) in toy_corpus(&cfg).into_iter().enumerate() {
            let mel = log_mel(&wave, &mel_cfg).unwrap();
            // per-bin minimum over time isolates the steady bed from the tones
            let floor: Vec<f64> = (0..80)
                .map(|b| (0..mel.n_frames()).map(|t| f64::from(mel.frame(t)[b])).fold(f64::INFINITY, f64::min))
                .collect();
            let d = i % 3;
            for (m, v) in means[d].iter_mut().zip(&floor) {
                *m += v;
            }
            counts[d] += 1;
            per_utt.push((d, floor));
        }
        for (m, c) in means.iter_mut().zip(counts) {
            m.iter_mut().for_each(|v| *v /= c as f64);
        }
        for (d, floor) in per_utt {
            let dist: Vec<f64> = means.iter().map(|m| m.iter().zip(&floor).map(|(a, b)| (a - b).powi(2)).sum()).collect();
            let nearest = (0..3).min_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap()).unwrap();
            assert_eq!(nearest, d);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = ToyConfig::new(11, 3).with_dialects(2);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        make_toy_corpus(&cfg, a.path()).unwrap();
        make_toy_corpus(&cfg, b.path()).unwrap();
        for name in ["manifest.jsonl", "toy-0000.wav", "toy-0002.wav"] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
        let utts = super::super::load_manifest(&a.path().join("manifest.jsonl")).unwrap();
        assert_eq!(utts.len(), 3);
        assert_eq!(utts[1].dialect.as_deref(), Some("d1"));
        let w = load_wave(&utts[0].audio, false).unwrap();
        assert_eq!(w.len() % CHAR_SAMPLES, 0);
    }
}
