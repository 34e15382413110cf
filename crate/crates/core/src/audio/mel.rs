use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioError, Waveform, SAMPLE_RATE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub win_length: usize,
    pub hop_length: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    /// 25 ms Hann window, 10 ms hop, 1024-point FFT, 80 bins over 0–8 kHz.
    fn default() -> Self {
        Self {
            win_length: 400,
            hop_length: 160,
            n_fft: 1024,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: 1e-6,
        }
    }
}

impl MelConfig {
    /// `floor((len - window) / hop) + 1`, or 0 when shorter than one window.
    pub fn num_frames(&self, samples: usize) -> usize {
        if samples < self.win_length {
            0
        } else {
            (samples - self.win_length) / self.hop_length + 1
        }
    }
}

/// `frames × n_mels` log-amplitudes, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f32>,
    n_frames: usize,
    n_mels: usize,
    /// Frame hop in seconds.
    pub hop: f64,
    /// Analysis window in seconds.
    pub window: f64,
}

impl MelSpectrogram {
    pub fn from_frames(data: Vec<f32>, n_mels: usize, hop: f64, window: f64) -> Self {
        assert!(n_mels > 0 && data.len() % n_mels == 0);
        Self {
            n_frames: data.len() / n_mels,
            data,
            n_mels,
            hop,
            window,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * self.n_mels..(i + 1) * self.n_mels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters, `n_mels × (n_fft/2 + 1)`, unit peak.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let bins = cfg.n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(SAMPLE_RATE) / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - l) / (c - l);
                    let down = (r - f) / (r - c);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

struct Stft {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    fn new(cfg: &MelConfig) -> Self {
        Self {
            window: hann(cfg.win_length),
            fft: FftPlanner::new().plan_fft_forward(cfg.n_fft),
        }
    }

    fn frame(&self, cfg: &MelConfig, samples: &[f32], start: usize, buf: &mut [Complex<f64>]) -> Vec<f64> {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < cfg.win_length {
                Complex::new(f64::from(samples[start + i]) * self.window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        self.fft.process(buf);
        buf[..cfg.n_fft / 2 + 1].iter().map(|c| c.norm()).collect()
    }
}

/// Magnitude spectra of each Hann-windowed frame, `frames × (n_fft/2 + 1)`.
pub fn stft_magnitudes(w: &Waveform, cfg: &MelConfig) -> Result<Vec<Vec<f64>>, AudioError> {
    let n = cfg.num_frames(w.len());
    if n == 0 {
        return Err(AudioError::TooShort {
            samples: w.len(),
            needed: cfg.win_length,
        });
    }
    let stft = Stft::new(cfg);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    Ok((0..n)
        .map(|t| stft.frame(cfg, w.samples(), t * cfg.hop_length, &mut buf))
        .collect())
}

/// Log-compressed mel filterbank energies: `ln(mel · |STFT| + floor)`.
pub fn log_mel(w: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram, AudioError> {
    let mags = stft_magnitudes(w, cfg)?;
    let bank = mel_filterbank(cfg);
    let mut data = Vec::with_capacity(mags.len() * cfg.n_mels);
    for spec in &mags {
        for filt in &bank {
            let e: f64 = filt.iter().zip(spec).map(|(a, b)| a * b).sum();
            data.push((e + cfg.log_floor).ln() as f32);
        }
    }
    let rate = f64::from(SAMPLE_RATE);
    Ok(MelSpectrogram::from_frames(
        data,
        cfg.n_mels,
        cfg.hop_length as f64 / rate,
        cfg.win_length as f64 / rate,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, len: usize) -> Waveform {
        Waveform::new(
            (0..len)
                .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()) as f32)
                .collect(),
        )
    }

    #[test]
    fn frame_count_one_second() {
        let cfg = MelConfig::default();
        let m = log_mel(&Waveform::silence(16000), &cfg).unwrap();
        assert_eq!(m.n_frames(), 98);
        assert_eq!(m.n_mels(), 80);
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = MelConfig::default();
        let m = log_mel(&Waveform::silence(4000), &cfg).unwrap();
        let floor = (1e-6f64).ln() as f32;
        assert!(m.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn too_short() {
        let cfg = MelConfig::default();
        assert!(matches!(
            log_mel(&Waveform::silence(399), &cfg),
            Err(AudioError::TooShort { samples: 399, needed: 400 })
        ));
        assert_eq!(log_mel(&Waveform::silence(400), &cfg).unwrap().n_frames(), 1);
    }

    #[test]
    fn stft_matches_direct_dft() {
        let cfg = MelConfig::default();
        let w = Waveform::new((0..800).map(|i| ((i * 37 % 101) as f32 / 50.0 - 1.0) * 0.3).collect());
        let mags = stft_magnitudes(&w, &cfg).unwrap();
        let win = hann(cfg.win_length);
        for (t, spec) in mags.iter().enumerate().take(3) {
            for k in [0usize, 1, 17, 250, 512] {
                let (mut re, mut im) = (0.0, 0.0);
                for n in 0..cfg.win_length {
                    let x = f64::from(w.samples()[t * cfg.hop_length + n]) * win[n];
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / cfg.n_fft as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                assert!((spec[k] - (re * re + im * im).sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pure_tone_peaks_in_one_bin() {
        let cfg = MelConfig::default();
        let m = log_mel(&tone(440.0, 16000), &cfg).unwrap();
        let argmax = |f: &[f32]| {
            f.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        let first = argmax(m.frame(0));
        assert!((0..m.n_frames()).all(|t| argmax(m.frame(t)) == first));
        // the winning filter's support contains 440 Hz
        let bank = mel_filterbank(&cfg);
        let bin = (440.0 / (16000.0 / 1024.0)) as usize;
        assert!(bank[first][bin] > 0.0 || bank[first][bin + 1] > 0.0);
    }

    #[test]
    fn hop_shift_shifts_frames() {
        let cfg = MelConfig::default();
        let base: Vec<f32> = (0..4000).map(|i| ((i * 7919 % 1000) as f32 / 500.0 - 1.0) * 0.2).collect();
        let shifted = Waveform::new(base[160..].to_vec());
        let a = log_mel(&Waveform::new(base), &cfg).unwrap();
        let b = log_mel(&shifted, &cfg).unwrap();
        assert_eq!(a.n_frames(), b.n_frames() + 1);
        for t in 0..b.n_frames() {
            assert_eq!(a.frame(t + 1), b.frame(t));
        }
    }

    #[test]
    fn filterbank_covers_band() {
        let bank = mel_filterbank(&MelConfig::default());
        assert_eq!(bank.len(), 80);
        assert!(bank.iter().all(|f| f.iter().any(|&w| w > 0.0)));
    }
}
