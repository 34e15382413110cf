//! Manifests, corpus filtering, the synthetic tone corpus and budgeted batching.

mod batch;
mod manifest;
mod toy;

pub use batch::{batch_iter, plan_batches, Batch, BatchConfig, BatchCursor, BatchPlan, Example, Modality};
pub use manifest::{filter_corpus, load_manifest, parse_manifest, write_manifest, Utterance};
pub use toy::{default_alphabet, make_toy_corpus, render_text, tone_frequency, toy_corpus, ToyConfig, CHAR_SAMPLES};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
