//! Magnitude-only inversion: mel back to linear magnitudes, then iterative
//! phase reconstruction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{mel_filterbank, MelConfig, MelSpectrogram, Waveform};

/// Spread each mel energy back over the FFT bins its filter covers,
/// dividing by the filter's area so flat spectra round-trip exactly.
pub fn mel_to_linear(mel: &MelSpectrogram, cfg: &MelConfig) -> Vec<Vec<f64>> {
    let bank = mel_filterbank(cfg);
    let bins = cfg.n_fft / 2 + 1;
    let area: Vec<f64> = bank.iter().map(|f| f.iter().sum::<f64>().max(1e-12)).collect();
    let mut cover = vec![0.0; bins];
    for f in &bank {
        for (c, w) in cover.iter_mut().zip(f) {
            *c += w;
        }
    }
    (0..mel.n_frames())
        .map(|t| {
            let mut lin = vec![0.0; bins];
            for (m, f) in bank.iter().enumerate() {
                let e = (f64::from(mel.frame(t)[m]).exp() - cfg.log_floor).max(0.0) / area[m];
                for (l, w) in lin.iter_mut().zip(f) {
                    *l += w * e;
                }
            }
            for (l, c) in lin.iter_mut().zip(&cover) {
                if *c > 0.0 {
                    *l /= c;
                }
            }
            lin
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Griffin–Lim reconstruction of a waveform whose STFT magnitudes
/// (`frames × (n_fft/2 + 1)`) approximate `mags`.
pub fn griffin_lim(mags: &[Vec<f64>], cfg: &MelConfig, iterations: usize, seed: u64) -> Waveform {
    let frames = mags.len();
    if frames == 0 {
        return Waveform::new(Vec::new());
    }
    let (n, win, hop) = (cfg.n_fft, cfg.win_length, cfg.hop_length);
    let bins = n / 2 + 1;
    let len = (frames - 1) * hop + win;
    let window = hann(win);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut norm = vec![0.0; len];
    for t in 0..frames {
        for i in 0..win {
            norm[t * hop + i] += window[i] * window[i];
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phase: Vec<Vec<Complex<f64>>> = (0..frames)
        .map(|_| {
            (0..bins)
                .map(|_| Complex::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU)))
                .collect()
        })
        .collect();
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut signal = vec![0.0; len];
    for it in 0..=iterations {
        // overlap-add of the current estimate
        signal.iter_mut().for_each(|s| *s = 0.0);
        for t in 0..frames {
            for k in 0..bins {
                buf[k] = phase[t][k] * mags[t][k];
            }
            for k in bins..n {
                buf[k] = buf[n - k].conj();
            }
            inv.process(&mut buf);
            for i in 0..win {
                signal[t * hop + i] += buf[i].re / n as f64 * window[i];
            }
        }
        for (s, w) in signal.iter_mut().zip(&norm) {
            if *w > 1e-8 {
                *s /= w;
            }
        }
        if it == iterations {
            break;
        }
        for t in 0..frames {
            for i in 0..n {
                buf[i] = if i < win {
                    Complex::new(signal[t * hop + i] * window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            fwd.process(&mut buf);
            for k in 0..bins {
                let a = buf[k].norm();
                phase[t][k] = if a > 1e-12 { buf[k] / a } else { Complex::new(1.0, 0.0) };
            }
        }
    }
    Waveform::new(signal.into_iter().map(|s| s as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{log_mel, stft_magnitudes};

    fn tone(freq: f64, len: usize) -> Waveform {
        Waveform::new(
            (0..len)
                .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()) as f32)
                .collect(),
        )
    }

    #[test]
    fn reconstruction_keeps_the_magnitudes() {
        let cfg = MelConfig::default();
        let w = tone(440.0, 4000);
        let mags = stft_magnitudes(&w, &cfg).unwrap();
        let out = griffin_lim(&mags, &cfg, 32, 1);
        let again = stft_magnitudes(&out, &cfg).unwrap();
        let (mut err, mut total) = (0.0, 0.0);
        for (a, b) in mags.iter().zip(&again).skip(2).take(mags.len() - 4) {
            for (x, y) in a.iter().zip(b) {
                err += (x - y).abs();
                total += x.abs();
            }
        }
        assert!(err / total < 0.2, "spectral error {}", err / total);
    }

    #[test]
    fn mel_inversion_finds_the_tone() {
        let cfg = MelConfig::default();
        let mel = log_mel(&tone(1000.0, 4000), &cfg).unwrap();
        let lin = mel_to_linear(&mel, &cfg);
        let row = &lin[5];
        let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let hz = peak as f64 * 16000.0 / cfg.n_fft as f64;
        assert!((hz - 1000.0).abs() < 150.0, "peak at {hz}");
    }

    #[test]
    fn same_seed_same_audio() {
        let cfg = MelConfig::default();
        let mags = stft_magnitudes(&tone(300.0, 2000), &cfg).unwrap();
        assert_eq!(griffin_lim(&mags, &cfg, 4, 3), griffin_lim(&mags, &cfg, 4, 3));
    }
}
