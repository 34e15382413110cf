//! Per-utterance features and the padding helpers shared by every trainer.

use sawt_tensor::Tensor;

use crate::audio::{
    align_labels, assign_labels, fit_kmeans, log_mel, AudioError, ClusterModel, FitReport, KMeansConfig, MelConfig,
    MelSpectrogram, Waveform,
};
use crate::corpus::Utterance;
use crate::model::ModelConfig;

/// One utterance with everything a training step may need.
#[derive(Clone, Debug)]
pub struct SpeechItem {
    pub id: String,
    pub wave: Waveform,
    pub mel: MelSpectrogram,
    /// Unit labels aligned to the encoder frame count (empty without a cluster model).
    pub labels: Vec<u32>,
    pub tokens: Vec<u32>,
}

impl SpeechItem {
    pub fn new(
        id: &str,
        wave: Waveform,
        tokens: Vec<u32>,
        units: Option<&ClusterModel>,
        cfg: &ModelConfig,
        mel_cfg: &MelConfig,
    ) -> Result<Self, AudioError> {
        let mel = log_mel(&wave, mel_cfg)?;
        let labels = match units {
            Some(m) => align_labels(&assign_labels(m, &mel)?, cfg.frames_for(wave.len())).labels,
            None => Vec::new(),
        };
        Ok(Self {
            id: id.to_string(),
            wave,
            mel,
            labels,
            tokens,
        })
    }
}

/// Cluster every mel frame of `waves` into `k` discrete units.
pub fn fit_units(
    waves: &[&Waveform],
    k: usize,
    seed: u64,
    mel_cfg: &MelConfig,
    cfg: &KMeansConfig,
) -> Result<(ClusterModel, FitReport), AudioError> {
    let mut feats = Vec::new();
    for w in waves {
        feats.extend_from_slice(log_mel(w, mel_cfg)?.data());
    }
    fit_kmeans(&feats, mel_cfg.n_mels, k, seed, cfg)
}

/// Tokenize and featurize a whole corpus. `tokens` maps each utterance to
/// its target ids.
pub fn prepare_items(
    corpus: &[(Utterance, Waveform)],
    mut tokens: impl FnMut(&Utterance) -> Vec<u32>,
    units: Option<&ClusterModel>,
    cfg: &ModelConfig,
    mel_cfg: &MelConfig,
) -> Result<Vec<SpeechItem>, AudioError> {
    corpus
        .iter()
        .map(|(u, w)| SpeechItem::new(&u.id, w.clone(), tokens(u), units, cfg, mel_cfg))
        .collect()
}

/// Right-padded waveforms.
pub struct PaddedSpeech {
    pub samples: Vec<f32>,
    pub width: usize,
    pub lengths: Vec<usize>,
}

pub fn pad_waves(waves: &[&Waveform]) -> PaddedSpeech {
    let width = waves.iter().map(|w| w.len()).max().unwrap_or(0);
    let mut samples = Vec::with_capacity(waves.len() * width);
    for w in waves {
        samples.extend_from_slice(w.samples());
        samples.resize(samples.len() + width - w.len(), 0.0);
    }
    PaddedSpeech {
        samples,
        width,
        lengths: waves.iter().map(|w| w.len()).collect(),
    }
}

/// `[batch, frames, bins]` zero-padded mels and their lengths.
pub fn pad_mels(mels: &[&MelSpectrogram]) -> (Tensor, Vec<usize>) {
    let t = mels.iter().map(|m| m.n_frames()).max().unwrap_or(0);
    let bins = mels.first().map_or(0, |m| m.n_mels());
    let mut data = Vec::with_capacity(mels.len() * t * bins);
    for m in mels {
        data.extend(m.data().iter().map(|&v| f64::from(v)));
        data.resize(data.len() + (t - m.n_frames()) * bins, 0.0);
    }
    (Tensor::new(vec![mels.len(), t, bins], data), mels.iter().map(|m| m.n_frames()).collect())
}

/// Teacher-forcing input: every frame moved one step later, zeros first.
pub fn shift_frames(mel: &Tensor) -> Tensor {
    let s = mel.shape();
    let (b, t, m) = (s[0], s[1], s[2]);
    Tensor::from_fn(s, |i| {
        let (r, f, k) = (i / (t * m), i / m % t, i % m);
        if f == 0 {
            0.0
        } else {
            mel.data()[(r * t + f - 1) * m + k]
        }
    })
    .reshape(&[b, t, m])
}

/// Row-major `batch × width` ids padded with `fill`.
pub fn pad_ids(seqs: &[&[u32]], fill: u32) -> (Vec<u32>, usize, Vec<usize>) {
    let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut out = Vec::with_capacity(seqs.len() * width);
    for s in seqs {
        out.extend_from_slice(s);
        out.resize(out.len() + width - s.len(), fill);
    }
    (out, width, seqs.iter().map(|s| s.len()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_helpers() {
        let (ids, w, lens) = pad_ids(&[&[7, 8, 9], &[6]], 0);
        assert_eq!((ids, w, lens), (vec![7, 8, 9, 6, 0, 0], 3, vec![3, 1]));
        let m = Tensor::new(vec![1, 3, 1], vec![1.0, 2.0, 3.0]);
        assert_eq!(shift_frames(&m).data(), &[0.0, 1.0, 2.0]);
        let a = Waveform::new(vec![0.5; 3]);
        let b = Waveform::new(vec![0.25; 1]);
        let p = pad_waves(&[&a, &b]);
        assert_eq!(p.samples, vec![0.5, 0.5, 0.5, 0.25, 0.0, 0.0]);
        assert_eq!(p.lengths, vec![3, 1]);
    }
}
