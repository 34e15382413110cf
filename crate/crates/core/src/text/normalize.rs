use std::fmt;
use std::ops::Deref;

use unicode_general_category::{get_general_category, GeneralCategory};

/// Text after [`normalize_text`]: no diacritics, no punctuation other than
/// `@` and `%`, ASCII digits only, single spaces.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct NormalizedText(String);

impl NormalizedText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl Deref for NormalizedText {
    type Target = str;
    fn deref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Harakat and tanween (U+064B–U+0652), superscript alef and tatweel.
pub fn is_diacritic(c: char) -> bool {
    matches!(c, '\u{064B}'..='\u{0652}' | '\u{0670}' | '\u{0640}')
}

fn is_punctuation(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
    )
}

fn map_char(c: char) -> Option<char> {
    match c {
        '\u{0660}'..='\u{0669}' => char::from_u32(c as u32 - 0x0660 + '0' as u32),
        '\u{06F0}'..='\u{06F9}' => char::from_u32(c as u32 - 0x06F0 + '0' as u32),
        '\u{066A}' | '%' => Some('%'),
        '@' => Some('@'),
        _ if is_diacritic(c) || is_punctuation(c) => None,
        _ => Some(c),
    }
}

/// Strip diacritics and punctuation (keeping `@` and `%`), map Indo-Arabic
/// digits to ASCII and collapse whitespace.
pub fn normalize_text(raw: &str) -> NormalizedText {
    let mapped: String = raw.chars().filter_map(map_char).collect();
    let mut out = String::with_capacity(mapped.len());
    for word in mapped.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    NormalizedText(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_harakat() {
        assert_eq!(normalize_text("كَتَبَ").as_str(), "كتب");
        assert_eq!(normalize_text("مُحَمَّدٌ").as_str(), "محمد");
    }

    #[test]
    fn maps_digits_and_keeps_percent() {
        assert_eq!(normalize_text("٨٠%").as_str(), "80%");
        assert_eq!(normalize_text("۱۲٪").as_str(), "12%");
    }

    #[test]
    fn removes_punctuation_but_not_at_sign() {
        assert_eq!(normalize_text("مرحبا!").as_str(), "مرحبا");
        assert_eq!(normalize_text("نعم، لا؟ ربما؛").as_str(), "نعم لا ربما");
        assert_eq!(normalize_text("user@host (x)").as_str(), "user@host x");
    }

    #[test]
    fn removes_tatweel_and_superscript_alef() {
        assert_eq!(normalize_text("جـــميل").as_str(), "جميل");
        assert_eq!(normalize_text("هٰذا").as_str(), "هذا");
    }

    #[test]
    fn collapses_whitespace() {
        assert_eq!(normalize_text("  كتب \t\n الولد  ").as_str(), "كتب الولد");
        assert_eq!(normalize_text("").as_str(), "");
        assert_eq!(normalize_text(" ! ").as_str(), "");
    }

    fn violates_invariants(s: &str) -> bool {
        s.chars().any(|c| {
            is_diacritic(c)
                || matches!(c, '\u{0660}'..='\u{0669}' | '\u{06F0}'..='\u{06F9}')
                || (is_punctuation(c) && c != '@' && c != '%')
        }) || s.contains("  ")
            || s.starts_with(' ')
            || s.ends_with(' ')
    }

    proptest! {
        #[test]
        fn idempotent_on_arbitrary_unicode(s in "\\PC{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
            prop_assert!(!violates_invariants(&once));
        }

        #[test]
        fn idempotent_on_arabic_heavy_text(s in "[\u{0600}-\u{06FF} !?.،@%]{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
            prop_assert!(!violates_invariants(&once));
        }
    }
}
