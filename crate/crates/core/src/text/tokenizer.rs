use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TextError;

/// Reserved symbols, occupying ids `0..SPECIALS.len()` in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Special {
    Pad,
    Bos,
    Eos,
    Unk,
    Blank,
    Mask,
}

pub const SPECIALS: [Special; 6] = [
    Special::Pad,
    Special::Bos,
    Special::Eos,
    Special::Unk,
    Special::Blank,
    Special::Mask,
];

impl Special {
    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn name(self) -> &'static str {
        match self {
            Special::Pad => "pad",
            Special::Bos => "bos",
            Special::Eos => "eos",
            Special::Unk => "unk",
            Special::Blank => "blank",
            Special::Mask => "mask",
        }
    }

    fn from_name(name: &str) -> Option<Special> {
        SPECIALS.into_iter().find(|s| s.name() == name)
    }
}

/// What `encode` does with a symbol that has no id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnkPolicy {
    /// Substitute the `unk` id (inference).
    Substitute,
    /// Fail with [`TextError::UnknownSymbol`] (training data).
    Reject,
}

/// Character-level vocabulary. Symbol `i` has id `i + SPECIALS.len()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    specials: BTreeMap<String, u32>,
    symbols: Vec<String>,
}

/// Vocabulary of the base tokenizer (if any) followed by every new
/// character of `corpus`, appended in codepoint order.
pub fn build_tokenizer<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    base: Option<&Tokenizer>,
) -> Result<Tokenizer, TextError> {
    let mut seen = BTreeSet::new();
    let mut any = false;
    for line in corpus {
        any = true;
        seen.extend(line.chars());
    }
    if !any {
        return Err(TextError::EmptyCorpus);
    }
    let mut tok = base.cloned().unwrap_or_else(Tokenizer::empty);
    let fresh: Vec<String> = seen
        .into_iter()
        .map(String::from)
        .filter(|s| !tok.index.contains_key(s))
        .collect();
    tok.extend(fresh);
    Ok(tok)
}

impl Tokenizer {
    /// Specials only.
    pub fn empty() -> Self {
        Self {
            symbols: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_symbols<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Self {
        let mut t = Self::empty();
        t.extend(symbols);
        t
    }

    /// Append symbols not already present. Existing ids never move.
    pub fn extend<S: Into<String>>(&mut self, symbols: impl IntoIterator<Item = S>) {
        for s in symbols {
            let s = s.into();
            if self.index.contains_key(&s) {
                continue;
            }
            let id = self.len() as u32;
            self.index.insert(s.clone(), id);
            self.symbols.push(s);
        }
    }

    /// Total vocabulary size including specials.
    pub fn len(&self) -> usize {
        SPECIALS.len() + self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id_of(&self, symbol: &str) -> Option<u32> {
        if let Some(s) = SPECIALS.iter().find(|s| format!("<{}>", s.name()) == symbol) {
            return Some(s.id());
        }
        self.index.get(symbol).copied()
    }

    /// Display form of an id: the symbol itself, or `<name>` for specials.
    pub fn symbol(&self, id: u32) -> Option<String> {
        let i = id as usize;
        if i < SPECIALS.len() {
            Some(format!("<{}>", SPECIALS[i].name()))
        } else {
            self.symbols.get(i - SPECIALS.len()).cloned()
        }
    }

    pub fn encode(&self, text: &str, policy: UnkPolicy) -> Result<Vec<u32>, TextError> {
        let mut buf = [0u8; 4];
        text.chars()
            .map(|c| {
                let s: &str = c.encode_utf8(&mut buf);
                match (self.index.get(s), policy) {
                    (Some(&id), _) => Ok(id),
                    (None, UnkPolicy::Substitute) => Ok(Special::Unk.id()),
                    (None, UnkPolicy::Reject) => Err(TextError::UnknownSymbol(s.to_string())),
                }
            })
            .collect()
    }

    /// Concatenate symbols; `pad`, `bos`, `eos` and `blank` render as nothing.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TextError> {
        let mut out = String::new();
        for &id in ids {
            match id {
                _ if id == Special::Pad.id()
                    || id == Special::Bos.id()
                    || id == Special::Eos.id()
                    || id == Special::Blank.id() => {}
                _ => out.push_str(&self.symbol(id).ok_or(TextError::InvalidId(id))?),
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let file = TokenizerFile {
            specials: SPECIALS.iter().map(|s| (s.name().to_string(), s.id())).collect(),
            symbols: self.symbols.clone(),
        };
        serde_json::to_string_pretty(&file).expect("tokenizer serializes")
    }

    pub fn from_json(src: &str) -> Result<Self, TextError> {
        let file: TokenizerFile =
            serde_json::from_str(src).map_err(|e| TextError::BadTokenizer(e.to_string()))?;
        if file.specials.len() != SPECIALS.len() {
            return Err(TextError::BadTokenizer(format!(
                "expected {} specials, found {}",
                SPECIALS.len(),
                file.specials.len()
            )));
        }
        for (name, &id) in &file.specials {
            match Special::from_name(name) {
                Some(s) if s.id() == id => {}
                _ => return Err(TextError::BadTokenizer(format!("special {name:?} with id {id}"))),
            }
        }
        let n = file.symbols.len();
        let tok = Self::from_symbols(file.symbols);
        if tok.symbols.len() != n {
            return Err(TextError::BadTokenizer("duplicate symbols".into()));
        }
        Ok(tok)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_json(&src).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}
