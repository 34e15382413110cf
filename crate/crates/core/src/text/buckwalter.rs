use std::collections::HashMap;
use std::sync::OnceLock;

use super::TextError;

const DEFAULT_TABLE: &str = include_str!("../../resources/buckwalter.tsv");

/// Bidirectional Arabic ↔ ASCII table parsed from the two-column resource format.
#[derive(Clone, Debug)]
pub struct TranslitTable {
    to_ascii: HashMap<char, char>,
    from_ascii: HashMap<char, char>,
}

impl TranslitTable {
    /// Parse `<hex codepoint> <TAB> <ascii>` lines; `#` starts a comment line.
    pub fn parse(src: &str) -> Result<Self, TextError> {
        let mut to_ascii = HashMap::new();
        let mut from_ascii = HashMap::new();
        for (i, line) in src.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| TextError::BadTable {
                line: line_no,
                reason: reason.to_string(),
            };
            let mut cols = line.split('\t');
            let cp = cols.next().ok_or_else(|| bad("missing codepoint"))?;
            let ascii = cols.next().ok_or_else(|| bad("missing ascii column"))?;
            let cp = u32::from_str_radix(cp.trim().trim_start_matches("U+"), 16)
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(|| bad("codepoint is not valid hex"))?;
            let mut chars = ascii.chars();
            let a = match (chars.next(), chars.next()) {
                (Some(a), None) if a.is_ascii_graphic() => a,
                _ => return Err(bad("ascii column must be one printable ASCII character")),
            };
            if to_ascii.insert(cp, a).is_some() || from_ascii.insert(a, cp).is_some() {
                return Err(bad("duplicate mapping"));
            }
        }
        Ok(Self { to_ascii, from_ascii })
    }

    /// The standard table shipped with the crate.
    pub fn standard() -> &'static TranslitTable {
        static TABLE: OnceLock<TranslitTable> = OnceLock::new();
        TABLE.get_or_init(|| TranslitTable::parse(DEFAULT_TABLE).expect("bundled table is valid"))
    }

    pub fn len(&self) -> usize {
        self.to_ascii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_ascii.is_empty()
    }

    /// Arabic-script symbols covered by the table, in codepoint order.
    pub fn arabic_symbols(&self) -> Vec<char> {
        let mut v: Vec<char> = self.to_ascii.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn encode(&self, text: &str) -> Result<String, TextError> {
        text.chars()
            .enumerate()
            .map(|(position, ch)| match self.to_ascii.get(&ch) {
                Some(&a) => Ok(a),
                None if ch.is_ascii() || ch.is_whitespace() => Ok(ch),
                None => Err(TextError::UnmappedSymbol { ch, position }),
            })
            .collect()
    }

    /// Inverse of [`TranslitTable::encode`]. ASCII outside the table's image
    /// (digits, `@`, `%`) passes through unchanged.
    pub fn decode(&self, text: &str) -> Result<String, TextError> {
        text.chars()
            .enumerate()
            .map(|(position, ch)| match self.from_ascii.get(&ch) {
                Some(&c) => Ok(c),
                None if ch.is_ascii() || ch.is_whitespace() => Ok(ch),
                None => Err(TextError::UnmappedSymbol { ch, position }),
            })
            .collect()
    }
}

pub fn to_buckwalter(text: &str) -> Result<String, TextError> {
    TranslitTable::standard().encode(text)
}

pub fn from_buckwalter(text: &str) -> Result<String, TextError> {
    TranslitTable::standard().decode(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_letters() {
        assert_eq!(to_buckwalter("كتب").unwrap(), "ktb");
        assert_eq!(to_buckwalter("باب").unwrap(), "bAb");
        assert_eq!(to_buckwalter("").unwrap(), "");
        assert_eq!(to_buckwalter("شمس و قمر").unwrap(), "$ms w qmr");
        assert_eq!(to_buckwalter("أإآؤئء").unwrap(), "><|&}'");
        assert_eq!(to_buckwalter("مدرسة").unwrap(), "mdrsp");
    }

    #[test]
    fn inverse_of_canonical_letters() {
        assert_eq!(from_buckwalter("ktb").unwrap(), "كتب");
        assert_eq!(from_buckwalter("").unwrap(), "");
        assert_eq!(from_buckwalter("80% @").unwrap(), "80% @");
    }

    #[test]
    fn unmapped_symbol_reports_position() {
        assert_eq!(
            to_buckwalter("كتڨ"),
            Err(TextError::UnmappedSymbol { ch: 'ڨ', position: 2 })
        );
        assert!(matches!(from_buckwalter("kتb"), Err(TextError::UnmappedSymbol { position: 1, .. })));
    }

    #[test]
    fn table_is_one_to_one() {
        let t = TranslitTable::standard();
        assert_eq!(t.len(), 51);
        for c in t.arabic_symbols() {
            let s = c.to_string();
            let bw = t.encode(&s).unwrap();
            assert_eq!(bw.chars().count(), 1);
            assert_eq!(t.decode(&bw).unwrap(), s);
        }
    }

    #[test]
    fn parse_rejects_duplicates_and_garbage() {
        assert!(TranslitTable::parse("0627\tA\n0628\tA\n").is_err());
        assert!(TranslitTable::parse("zz\tA\n").is_err());
        assert!(TranslitTable::parse("0627\tAB\n").is_err());
        let t = TranslitTable::parse("# comment\n\n0627\tA\n").unwrap();
        assert_eq!(t.encode("ا").unwrap(), "A");
    }

    fn in_domain() -> impl Strategy<Value = String> {
        let mut alphabet = TranslitTable::standard().arabic_symbols();
        alphabet.push(' ');
        proptest::collection::vec(proptest::sample::select(alphabet), 0..30)
            .prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn round_trip(s in in_domain()) {
            let bw = to_buckwalter(&s).unwrap();
            prop_assert_eq!(bw.chars().count(), s.chars().count());
            prop_assert_eq!(from_buckwalter(&bw).unwrap(), s);
        }
    }
}
