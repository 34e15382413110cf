use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::text::{normalize_text, NormalizedText};

/// One manifest record.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio: PathBuf,
    pub duration: f64,
    pub text_raw: String,
    pub text_norm: NormalizedText,
    pub dialect: Option<String>,
    pub overlap: bool,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    audio: PathBuf,
    duration: f64,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dialect: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    overlap: bool,
}

/// Parse JSONL records. Relative audio paths are resolved against `base`.
pub fn parse_manifest(src: &str, base: &Path) -> Result<Vec<Utterance>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        if !(r.duration > 0.0 && r.duration.is_finite()) {
            return Err(CorpusError::Parse {
                line: line_no,
                reason: format!("duration must be positive, got {}", r.duration),
            });
        }
        if !seen.insert(r.id.clone()) {
            return Err(CorpusError::DuplicateId(r.id));
        }
        let audio = if r.audio.is_relative() { base.join(&r.audio) } else { r.audio };
        out.push(Utterance {
            id: r.id,
            audio,
            duration: r.duration,
            text_norm: normalize_text(&r.text),
            text_raw: r.text,
            dialect: r.dialect,
            overlap: r.overlap,
        });
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<Utterance>, CorpusError> {
    let src = std::fs::read_to_string(path)?;
    parse_manifest(&src, path.parent().unwrap_or(Path::new(".")))
}

/// Write records as JSONL, with audio paths relative to `base` where possible.
pub fn write_manifest(utts: &[Utterance], path: &Path) -> Result<(), CorpusError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = String::new();
    for u in utts {
        let rec = Record {
            id: u.id.clone(),
            audio: u.audio.strip_prefix(base).unwrap_or(&u.audio).to_path_buf(),
            duration: u.duration,
            text: u.text_raw.clone(),
            dialect: u.dialect.clone(),
            overlap: u.overlap,
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Drop utterances longer than `max_dur` seconds (the limit itself is kept)
/// and, if asked, those flagged as overlapping speech.
pub fn filter_corpus(utts: &[Utterance], max_dur: f64, drop_overlap: bool) -> Vec<Utterance> {
    utts.iter()
        .filter(|u| u.duration <= max_dur && !(drop_overlap && u.overlap))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, duration: f64, overlap: bool) -> Utterance {
        Utterance {
            id: id.into(),
            audio: PathBuf::from(format!("{id}.wav")),
            duration,
            text_raw: String::new(),
            text_norm: normalize_text(""),
            dialect: None,
            overlap,
        }
    }

    #[test]
    fn empty_manifest() {
        assert!(parse_manifest("", Path::new("/data")).unwrap().is_empty());
    }

    #[test]
    fn two_lines_normalized() {
        let src = concat!(
            r#"{"id":"a","audio":"a.wav","duration":1.5,"text":"كَتَبَ!"}"#,
            "\n",
            r#"{"id":"b","audio":"/abs/b.wav","duration":2,"text":"x","dialect":"EGY","overlap":true}"#,
            "\n"
        );
        let utts = parse_manifest(src, Path::new("/data")).unwrap();
        assert_eq!(utts.len(), 2);
        assert_eq!(utts[0].text_norm.as_str(), "كتب");
        assert_eq!(utts[0].audio, PathBuf::from("/data/a.wav"));
        assert_eq!(utts[1].audio, PathBuf::from("/abs/b.wav"));
        assert_eq!(utts[1].dialect.as_deref(), Some("EGY"));
        assert!(utts[1].overlap);
    }

    #[test]
    fn manifest_errors() {
        let dup = "{\"id\":\"a\",\"audio\":\"a\",\"duration\":1,\"text\":\"\"}\n".repeat(2);
        assert!(matches!(parse_manifest(&dup, Path::new(".")), Err(CorpusError::DuplicateId(id)) if id == "a"));
        let bad = "{\"id\":\"a\",\"audio\":\"a\",\"duration\":1,\"text\":\"\"}\nnot json\n";
        assert!(matches!(parse_manifest(bad, Path::new(".")), Err(CorpusError::Parse { line: 2, .. })));
        let zero = "{\"id\":\"a\",\"audio\":\"a\",\"duration\":0,\"text\":\"\"}";
        assert!(matches!(parse_manifest(zero, Path::new(".")), Err(CorpusError::Parse { line: 1, .. })));
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut u = utt("x", 1.0, false);
        u.audio = dir.path().join("x.wav");
        u.text_raw = "باب".into();
        u.text_norm = normalize_text("باب");
        write_manifest(std::slice::from_ref(&u), &path).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().contains("\"audio\":\"x.wav\""));
        assert_eq!(load_manifest(&path).unwrap(), vec![u]);
    }

    #[test]
    fn duration_boundary_is_inclusive() {
        let utts = vec![utt("a", 39.9, false), utt("b", 40.0, false), utt("c", 40.1, false)];
        let ids: Vec<String> = filter_corpus(&utts, 40.0, true).into_iter().map(|u| u.id).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn overlap_dropped_and_idempotent() {
        let utts = vec![utt("a", 1.0, true), utt("b", 2.0, false), utt("c", 50.0, false), utt("d", 3.0, false)];
        let once = filter_corpus(&utts, 40.0, true);
        assert_eq!(once.iter().map(|u| u.id.as_str()).collect::<Vec<_>>(), ["b", "d"]);
        assert_eq!(filter_corpus(&once, 40.0, true), once);
        assert_eq!(filter_corpus(&utts, 40.0, false).len(), 3);
        assert!(filter_corpus(&[], 40.0, true).is_empty());
    }
}
