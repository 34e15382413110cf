use std::path::Path;

use super::AudioError;

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio at [`SAMPLE_RATE`] with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
}

impl Waveform {
    /// Clamps to `[-1, 1]` and replaces non-finite samples with zero.
    pub fn new(samples: Vec<f32>) -> Self {
        let samples = samples
            .into_iter()
            .map(|s| if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        Self { samples }
    }

    pub fn silence(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(SAMPLE_RATE)
    }
}

fn resample_linear(samples: &[f32], from: u32) -> Vec<f32> {
    if samples.is_empty() {
        return Vec::new();
    }
    let ratio = f64::from(from) / f64::from(SAMPLE_RATE);
    let out_len = ((samples.len() as f64) / ratio).floor() as usize;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            let frac = (pos - j as f64) as f32;
            let a = samples[j.min(samples.len() - 1)];
            let b = samples[(j + 1).min(samples.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

/// Read a PCM or float WAV file, averaging channels to mono.
///
/// Files at other rates are rejected with [`AudioError::RateMismatch`]
/// unless `resample` is set, in which case they are linearly resampled.
pub fn load_wave(path: &Path, resample: bool) -> Result<Waveform, AudioError> {
    if !path.exists() {
        return Err(AudioError::FileNotFound(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path).map_err(|e| AudioError::UnsupportedFormat(e.to_string()))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| AudioError::UnsupportedFormat(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = 2f32.powi(i32::from(spec.bits_per_sample) - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| AudioError::UnsupportedFormat(e.to_string()))?
        }
    };
    let mono: Vec<f32> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    let mono = if spec.sample_rate == SAMPLE_RATE {
        mono
    } else if resample {
        resample_linear(&mono, spec.sample_rate)
    } else {
        return Err(AudioError::RateMismatch {
            found: spec.sample_rate,
        });
    };
    Ok(Waveform::new(mono))
}

/// Write 16-bit PCM mono at [`SAMPLE_RATE`].
pub fn write_wave(path: &Path, wave: &Waveform) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| AudioError::UnsupportedFormat(e.to_string()))?;
    for &s in wave.samples() {
        let v = (s * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| AudioError::UnsupportedFormat(e.to_string()))?;
    }
    w.finalize().map_err(|e| AudioError::UnsupportedFormat(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, rate: u32, channels: u16, frames: &[Vec<i16>]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for f in frames {
            for &s in f {
                w.write_sample(s).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn silence_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_wave(&p, &Waveform::silence(16000)).unwrap();
        let w = load_wave(&p, false).unwrap();
        assert_eq!(w.len(), 16000);
        assert!(w.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let frames: Vec<Vec<i16>> = (0..100).map(|i| vec![i * 100, -(i * 50)]).collect();
        write_raw(&p, SAMPLE_RATE, 2, &frames);
        let w = load_wave(&p, false).unwrap();
        assert_eq!(w.len(), 100);
        for (i, &s) in w.samples().iter().enumerate() {
            let expected = (i as f32 * 100.0 - i as f32 * 50.0) / 2.0 / 32768.0;
            assert!((s - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_rate_rejected_unless_resampling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("8k.wav");
        let frames: Vec<Vec<i16>> = (0..8000).map(|_| vec![1000]).collect();
        write_raw(&p, 8000, 1, &frames);
        assert!(matches!(load_wave(&p, false), Err(AudioError::RateMismatch { found: 8000 })));
        let w = load_wave(&p, true).unwrap();
        assert_eq!(w.len(), 16000);
    }

    #[test]
    fn missing_and_garbage_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_wave(&dir.path().join("nope.wav"), false),
            Err(AudioError::FileNotFound(_))
        ));
        let p = dir.path().join("bad.wav");
        std::fs::write(&p, b"not a wav file").unwrap();
        assert!(matches!(load_wave(&p, false), Err(AudioError::UnsupportedFormat(_))));
    }
}
