use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sawt_tensor::Tensor;
use serde_json::json;

use super::config::RunConfig;
use super::{CliError, CliResult};
use crate::audio::{assign_labels, load_wave, log_mel, ClusterModel, KMeansConfig, MelConfig, Waveform};
use crate::corpus::{filter_corpus, load_manifest, make_toy_corpus, write_manifest, ToyConfig, Utterance};
use crate::model::Archive;
use crate::text::{build_tokenizer, from_buckwalter, normalize_text, to_buckwalter, Tokenizer, TranslitTable};

pub(super) fn read_input(path: Option<PathBuf>) -> Result<String, CliError> {
    match path {
        Some(p) => Ok(std::fs::read_to_string(p)?),
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            Ok(s)
        }
    }
}

/// Write `body` to `out`, or stdout when absent.
pub(super) fn write_output(out: Option<&Path>, body: &str) -> CliResult {
    match out {
        Some(p) => std::fs::write(p, body)?,
        None => std::io::stdout().lock().write_all(body.as_bytes())?,
    }
    Ok(())
}

pub(super) fn load_waves(utts: &[Utterance]) -> Result<Vec<(Utterance, Waveform)>, CliError> {
    utts.iter()
        .map(|u| Ok((u.clone(), load_wave(&u.audio, true)?)))
        .collect()
}

pub fn normalize(input: Option<PathBuf>) -> CliResult {
    let src = read_input(input)?;
    let mut out = String::new();
    for line in src.lines() {
        out.push_str(normalize_text(line).as_str());
        out.push('\n');
    }
    write_output(None, &out)
}

pub fn translit(to_bw: bool, table: Option<PathBuf>, input: Option<PathBuf>) -> CliResult {
    let custom = match table {
        Some(p) => Some(TranslitTable::parse(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let src = read_input(input)?;
    let mut out = String::new();
    for line in src.lines() {
        let converted = match (&custom, to_bw) {
            (Some(t), true) => t.encode(line)?,
            (Some(t), false) => t.decode(line)?,
            (None, true) => to_buckwalter(line)?,
            (None, false) => from_buckwalter(line)?,
        };
        out.push_str(&converted);
        out.push('\n');
    }
    write_output(None, &out)
}

pub fn build_vocab(base: Option<PathBuf>, input: Option<PathBuf>, out: Option<PathBuf>) -> CliResult {
    let base = match base {
        Some(p) => Some(Tokenizer::load(&p)?),
        None => None,
    };
    let src = read_input(input)?;
    let lines: Vec<String> = src.lines().map(|l| normalize_text(l).into_string()).collect();
    let tok = build_tokenizer(lines.iter().map(String::as_str), base.as_ref())?;
    write_output(out.as_deref(), &(tok.to_json() + "\n"))
}

pub fn mel_archive(mel: &crate::audio::MelSpectrogram, mut meta: serde_json::Value) -> Archive {
    meta["kind"] = "mel".into();
    meta["hop"] = mel.hop.into();
    meta["window"] = mel.window.into();
    let mut a = Archive::new(meta);
    a.push(
        "mel",
        Tensor::new(
            vec![mel.n_frames(), mel.n_mels()],
            mel.data().iter().map(|&v| f64::from(v)).collect(),
        ),
    );
    a
}

pub fn extract_mels(manifest: &Path, out: &Path) -> CliResult {
    let cfg = MelConfig::default();
    std::fs::create_dir_all(out)?;
    RunConfig {
        command: "extract-mels".into(),
        preset: String::new(),
        seed: 0,
        out: out.to_path_buf(),
        settings: super::config::settings(&[serde_json::to_value(&cfg)?]),
    }
    .write(out)?;
    for (u, w) in load_waves(&load_manifest(manifest)?)? {
        let mel = log_mel(&w, &cfg)?;
        mel_archive(&mel, json!({"id": u.id})).save(&out.join(format!("{}.mel.swar", u.id)))?;
    }
    Ok(())
}

pub fn fit_units(manifest: &Path, k: usize, seed: u64, out: &Path) -> CliResult {
    let corpus = load_waves(&load_manifest(manifest)?)?;
    let waves: Vec<&Waveform> = corpus.iter().map(|(_, w)| w).collect();
    let (model, report) = crate::prep::fit_units(&waves, k, seed, &MelConfig::default(), &KMeansConfig::default())?;
    model.save(out)?;
    let summary = json!({
        "k": k,
        "iterations": report.iterations,
        "converged": report.converged,
        "inertia": report.inertia.last(),
    });
    write_output(None, &(summary.to_string() + "\n"))
}

pub fn label(model: &Path, manifest: &Path, out: Option<PathBuf>) -> CliResult {
    let units = ClusterModel::load(model)?;
    let cfg = MelConfig::default();
    let mut body = String::new();
    for (u, w) in load_waves(&load_manifest(manifest)?)? {
        let seq = assign_labels(&units, &log_mel(&w, &cfg)?)?;
        body.push_str(&json!({"id": u.id, "labels": seq.labels}).to_string());
        body.push('\n');
    }
    write_output(out.as_deref(), &body)
}

pub fn make_toy(seed: u64, n: usize, dialects: usize, out: &Path) -> CliResult {
    if dialects == 0 {
        return Err(CliError::Usage("--dialects must be at least 1".into()));
    }
    let cfg = ToyConfig::new(seed, n).with_dialects(dialects);
    make_toy_corpus(&cfg, out)?;
    RunConfig {
        command: "make-toy".into(),
        preset: "toy".into(),
        seed,
        out: out.to_path_buf(),
        settings: super::config::settings(&[json!({"n": n, "dialects": dialects})]),
    }
    .write(out)
}

pub fn filter_manifest(manifest: &Path, max_dur: f64, drop_overlap: bool, out: &Path) -> CliResult {
    let utts = load_manifest(manifest)?;
    let kept = filter_corpus(&utts, max_dur, drop_overlap);
    write_manifest(&kept, out)?;
    log::info!("kept {} of {} utterances", kept.len(), utts.len());
    Ok(())
}
