//! Arabic text preprocessing: normalization, Buckwalter transliteration and
//! the character tokenizer shared by every text-facing network.

mod buckwalter;
mod normalize;
mod tokenizer;

pub use buckwalter::{from_buckwalter, to_buckwalter, TranslitTable};
pub use normalize::{is_diacritic, normalize_text, NormalizedText};
pub use tokenizer::{build_tokenizer, Special, Tokenizer, UnkPolicy, SPECIALS};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextError {
    #[error("symbol {ch:?} (U+{:04X}) at position {position} has no transliteration", *.ch as u32)]
    UnmappedSymbol { ch: char, position: usize },
    #[error("cannot build a tokenizer from an empty corpus")]
    EmptyCorpus,
    #[error("symbol {0:?} is not in the vocabulary")]
    UnknownSymbol(String),
    #[error("token id {0} is out of range")]
    InvalidId(u32),
    #[error("malformed transliteration table line {line}: {reason}")]
    BadTable { line: usize, reason: String },
    #[error("malformed tokenizer file: {0}")]
    BadTokenizer(String),
}
