use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::tools::{load_waves, mel_archive, read_input, write_output};
use super::train::tokenizer_from_meta;
use super::{CliError, CliResult};
use crate::audio::{write_wave, MelConfig};
use crate::corpus::load_manifest;
use crate::metrics::{score, Level, ScoreOptions};
use crate::model::Model;
use crate::tasks::{
    classify_dialect, synthesize as synth, transcribe as decode, CharLm, DecodeMode, DialectMap, Fusion, GriffinLim,
    SynthConfig, Vocoder,
};
use crate::text::{normalize_text, UnkPolicy};

fn jsonl(rows: impl IntoIterator<Item = Value>) -> String {
    rows.into_iter().map(|r| format!("{r}\n")).collect()
}

pub fn transcribe(
    ckpt: &Path,
    manifest: &Path,
    beam: usize,
    lm: Option<PathBuf>,
    lm_weight: f64,
    length_bonus: f64,
    out: Option<PathBuf>,
) -> CliResult {
    let (model, meta) = Model::load(ckpt)?;
    let tok = tokenizer_from_meta(&meta)?;
    let lm = lm.map(|p| CharLm::load(&p)).transpose()?;
    let fusion = lm.as_ref().map(|lm| Fusion {
        lm,
        weight: lm_weight,
        length_bonus,
    });
    let mode = if beam == 0 { DecodeMode::Greedy } else { DecodeMode::Beam { width: beam } };
    let mut rows = Vec::new();
    for (u, w) in load_waves(&load_manifest(manifest)?)? {
        let h = decode(&model, &w, mode, fusion.as_ref())?;
        rows.push(json!({"id": u.id, "hyp": tok.decode(&h.ids)?, "score": h.score}));
    }
    write_output(out.as_deref(), &jsonl(rows))
}

pub fn synthesize(
    ckpt: &Path,
    text: Option<String>,
    file: Option<PathBuf>,
    max_frames: usize,
    threshold: f64,
    out: &Path,
) -> CliResult {
    let (model, meta) = Model::load(ckpt)?;
    let tok = tokenizer_from_meta(&meta)?;
    let text = match text {
        Some(t) => t,
        None => read_input(file)?,
    };
    let ids = tok.encode(normalize_text(&text).as_str(), UnkPolicy::Substitute)?;
    let cfg = SynthConfig {
        max_frames,
        stop_threshold: threshold,
    };
    let mel_cfg = MelConfig::default();
    let s = synth(&model, &ids, &cfg, &mel_cfg)?;
    if s.hit_max_frames {
        log::warn!("stop head never fired; output truncated at {max_frames} frames");
    }
    if out.extension().is_some_and(|e| e == "wav") {
        write_wave(out, &GriffinLim::default().vocode(&s.mel))?;
    } else {
        mel_archive(&s.mel, json!({"text": text})).save(out)?;
    }
    let summary = json!({"frames": s.mel.n_frames(), "hit_max_frames": s.hit_max_frames, "out": out});
    write_output(None, &format!("{summary}\n"))
}

pub fn classify(ckpt: &Path, manifest: &Path, out: Option<PathBuf>) -> CliResult {
    let (model, meta) = Model::load(ckpt)?;
    let map: DialectMap = serde_json::from_value(
        meta.get("dialects")
            .cloned()
            .ok_or_else(|| CliError::Data("checkpoint was not fine-tuned for dialects".into()))?,
    )?;
    let mut rows = Vec::new();
    for (u, w) in load_waves(&load_manifest(manifest)?)? {
        let (label, posterior) = classify_dialect(&model, &w, &map)?;
        rows.push(json!({"id": u.id, "label": label, "posterior": posterior}));
    }
    write_output(out.as_deref(), &jsonl(rows))
}

/// `(id, text)` pairs from JSONL rows carrying `id` and one of `keys`.
fn read_pairs(path: &Path, keys: &[&str]) -> Result<Vec<(String, String)>, CliError> {
    let src = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line)?;
        let field = |k: &str| v.get(k).and_then(Value::as_str).map(str::to_string);
        let id = field("id");
        let text = keys.iter().find_map(|k| field(k));
        match (id, text) {
            (Some(id), Some(text)) => out.push((id, text)),
            _ => {
                return Err(CliError::Data(format!(
                    "{}:{}: expected \"id\" and one of {keys:?}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn evaluate(refs: &Path, hyps: &Path, level: Level, raw: bool, no_spaces: bool) -> CliResult {
    let refs = read_pairs(refs, &["text", "ref"])?;
    let hyps = read_pairs(hyps, &["hyp", "text"])?;
    let mut opts = ScoreOptions::new(level);
    opts.raw = raw;
    opts.char_spaces = !no_spaces;
    let report = score(&refs, &hyps, &opts)?;
    let body = format!("{}\n{report}\n", serde_json::to_string(&report)?);
    write_output(None, &body)
}
