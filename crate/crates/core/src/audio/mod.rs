//! Waveform I/O, log-mel features, k-means acoustic units and span masks.

mod kmeans;
mod mask;
mod mel;
mod phase;
mod wave;

pub use kmeans::{align_labels, assign_labels, fit_kmeans, ClusterModel, DiscreteLabelSeq, FitReport, KMeansConfig};
pub use mask::{sample_mask_spans, MaskSpec};
pub use mel::{log_mel, mel_filterbank, stft_magnitudes, MelConfig, MelSpectrogram};
pub use phase::{griffin_lim, mel_to_linear};
pub use wave::{load_wave, write_wave, Waveform, SAMPLE_RATE};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("sample rate {found} Hz does not match the required {SAMPLE_RATE} Hz")]
    RateMismatch { found: u32 },
    #[error("{samples} samples is shorter than the {needed}-sample minimum")]
    TooShort { samples: usize, needed: usize },
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("k-means needs at least {k} distinct points, got {points}")]
    TooFewPoints { points: usize, k: usize },
    #[error("malformed cluster model: {0}")]
    BadModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
