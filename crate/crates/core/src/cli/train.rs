use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::config::{settings, Overrides, RunConfig};
use super::tools::load_waves;
use super::{CliError, CliResult, TrainArgs};
use crate::audio::{ClusterModel, MelConfig};
use crate::corpus::{load_manifest, BatchConfig, BatchCursor, Modality};
use crate::model::{Model, ModelConfig};
use crate::prep::{prepare_items, SpeechItem};
use crate::pretrain::{pretrain_step, Adam, TrainConfig, TrainState};
use crate::tasks::{
    add_dialect_labels, finetune_asr_step, finetune_did_step, finetune_tts_step, train_char_lm, DialectMap,
    FinetuneConfig, LmConfig, LmTrainConfig,
};
use crate::text::{build_tokenizer, Tokenizer, UnkPolicy};

const CHECKPOINT: &str = "checkpoint.swar";
const OPTIMIZER: &str = "optimizer.swar";
const LOG: &str = "train.jsonl";

pub(super) fn tokenizer_from_meta(meta: &Value) -> Result<Tokenizer, CliError> {
    let t = meta
        .get("tokenizer")
        .ok_or_else(|| CliError::Data("checkpoint carries no tokenizer".into()))?;
    Ok(Tokenizer::from_json(&t.to_string())?)
}

fn encode_all(tok: &Tokenizer, items: &[crate::corpus::Utterance]) -> Result<Vec<Vec<u32>>, CliError> {
    items
        .iter()
        .map(|u| Ok(tok.encode(u.text_norm.as_str(), UnkPolicy::Reject)?))
        .collect()
}

/// Per-batch padded budgets; per-item caps stay at their defaults.
struct Budgets {
    speech: usize,
    text: usize,
}

impl Budgets {
    /// `toy_speech` is the toy speech budget in samples.
    fn resolve(preset: &str, toy_speech: usize, ov: &mut Overrides) -> Result<Self, CliError> {
        let (s, t) = if preset == "toy" { (toy_speech, 40) } else { (250_000, 600) };
        Ok(Self {
            speech: ov.take("batch_speech_samples", s)?,
            text: ov.take("batch_text_chars", t)?,
        })
    }

    fn json(&self) -> Value {
        json!({"batch_speech_samples": self.speech, "batch_text_chars": self.text})
    }
}

fn save_checkpoint(out: &Path, model: &Model, state: &TrainState, extra: &Value) -> CliResult {
    let mut meta = extra.clone();
    meta["step"] = state.step.into();
    model.save(&out.join(CHECKPOINT), meta)?;
    state.adam.to_archive(json!({"step": state.step})).save(&out.join(OPTIMIZER))?;
    Ok(())
}

fn load_resume(out: &Path) -> Result<(Model, Value, TrainState), CliError> {
    let (model, meta) = Model::load(&out.join(CHECKPOINT))?;
    let a = crate::model::Archive::load(&out.join(OPTIMIZER))?;
    let step = a.meta["step"]
        .as_u64()
        .ok_or_else(|| CliError::Data("optimizer archive lacks a step".into()))?;
    if meta["step"].as_u64() != Some(step) {
        return Err(CliError::Data("checkpoint and optimizer steps differ".into()));
    }
    Ok((
        model,
        meta,
        TrainState {
            adam: Adam::from_archive(&a)?,
            step,
        },
    ))
}

/// Keep the first `steps` lines of the log and reopen it for appending.
fn open_log(out: &Path, steps: u64) -> Result<std::fs::File, CliError> {
    let path = out.join(LOG);
    let kept: String = match std::fs::read_to_string(&path) {
        Ok(s) => s.lines().take(steps as usize).map(|l| format!("{l}\n")).collect(),
        Err(_) => String::new(),
    };
    if kept.lines().count() as u64 != steps {
        return Err(CliError::Data(format!("{} does not cover the {steps} resumed updates", path.display())));
    }
    std::fs::write(&path, kept)?;
    Ok(OpenOptions::new().append(true).open(path)?)
}

/// Run updates until `total`, logging one JSON line each and saving every
/// `every` updates and at the end.
fn train_loop(
    out: &Path,
    total: u64,
    every: u64,
    model: &mut Model,
    state: &mut TrainState,
    extra: &Value,
    mut step: impl FnMut(&mut Model, &mut TrainState) -> Result<Value, CliError>,
) -> CliResult {
    let mut log = open_log(out, state.step)?;
    while state.step < total {
        let report = step(model, state)?;
        writeln!(log, "{report}")?;
        if every > 0 && state.step % every == 0 {
            save_checkpoint(out, model, state, extra)?;
        }
    }
    save_checkpoint(out, model, state, extra)
}

fn cursor(lengths: Vec<Option<usize>>, modality: Modality, budget: usize, seed: u64, skip: u64) -> BatchCursor {
    let mut c = BatchCursor::new(lengths, modality, BatchConfig::new(budget), seed);
    for _ in 0..skip {
        c.next_batch();
    }
    c
}

fn next(c: &mut BatchCursor) -> Result<Vec<usize>, CliError> {
    c.next_batch()
        .ok_or_else(|| CliError::Data("no item fits within the batch caps".into()))
}

fn train_overrides(args: &TrainArgs) -> Result<Overrides, CliError> {
    let mut ov = Overrides::load(args.config.as_deref())?;
    if let Some(s) = args.seed {
        ov.set("seed", s.into());
    }
    if let Some(s) = args.steps {
        ov.set("max_updates", s.into());
    }
    if let Some(lr) = args.lr {
        ov.set("lr", lr.into());
    }
    Ok(ov)
}

pub fn pretrain(manifest: &Path, units: &Path, vocab: Option<PathBuf>, args: &TrainArgs) -> CliResult {
    let utts = load_manifest(manifest)?;
    let tok = match vocab {
        Some(p) => Tokenizer::load(&p)?,
        None => build_tokenizer(utts.iter().map(|u| u.text_norm.as_str()), None)?,
    };
    let mut ov = train_overrides(args)?;
    let base_model = ModelConfig::preset(&args.preset, tok.len())
        .ok_or_else(|| CliError::Usage(format!("unknown preset {:?}", args.preset)))?;
    let mut mcfg: ModelConfig = ov.apply(&base_model)?;
    mcfg.vocab_size = tok.len();
    mcfg.validate()?;
    let base_train = if args.preset == "paper" { TrainConfig::default() } else { TrainConfig::toy() };
    let tcfg: TrainConfig = ov.apply(&base_train)?;
    tcfg.validate()?;
    let budgets = Budgets::resolve(&args.preset, 32_000, &mut ov)?;
    ov.finish()?;

    let run = RunConfig {
        command: "pretrain".into(),
        preset: args.preset.clone(),
        seed: tcfg.seed,
        out: args.out.clone(),
        settings: settings(&[serde_json::to_value(&mcfg)?, serde_json::to_value(&tcfg)?, budgets.json()]),
    };
    run.write(&args.out)?;

    let units = ClusterModel::load(units)?;
    let corpus = load_waves(&utts)?;
    let ids = encode_all(&tok, &utts)?;
    let mut k = 0;
    let items = prepare_items(
        &corpus,
        |_| {
            k += 1;
            ids[k - 1].clone()
        },
        Some(&units),
        &mcfg,
        &MelConfig::default(),
    )?;

    let extra = json!({"tokenizer": serde_json::from_str::<Value>(&tok.to_json())?, "task": "pretrain"});
    let (mut model, mut state) = if args.resume {
        let (m, _, s) = load_resume(&args.out)?;
        (m, s)
    } else {
        (Model::new(mcfg, tcfg.seed)?, TrainState::default())
    };
    let mut speech = cursor(
        items.iter().map(|i| Some(i.wave.len())).collect(),
        Modality::Speech,
        budgets.speech,
        tcfg.seed,
        state.step,
    );
    let mut text = cursor(
        items.iter().map(|i| Some(i.tokens.len())).collect(),
        Modality::Text,
        budgets.text,
        tcfg.seed ^ 1,
        state.step,
    );
    train_loop(&args.out, tcfg.max_updates, args.checkpoint_every, &mut model, &mut state, &extra, |model, state| {
        let sb: Vec<&SpeechItem> = next(&mut speech)?.into_iter().map(|i| &items[i]).collect();
        let tb: Vec<&[u32]> = next(&mut text)?.into_iter().map(|i| items[i].tokens.as_slice()).collect();
        let r = pretrain_step(&sb, &tb, model, state, &tcfg)?;
        Ok(serde_json::to_value(r)?)
    })
}

pub enum Task {
    Asr { ce_weight: Option<f64> },
    Tts,
    Did,
}

impl Task {
    fn name(&self) -> &'static str {
        match self {
            Task::Asr { .. } => "asr",
            Task::Tts => "tts",
            Task::Did => "did",
        }
    }
}

pub fn finetune(task: Task, ckpt: &Path, manifest: &Path, freeze: Vec<String>, args: &TrainArgs) -> CliResult {
    let mut ov = train_overrides(args)?;
    if let Task::Asr { ce_weight: Some(w) } = task {
        ov.set("ce_weight", w.into());
    }
    if !freeze.is_empty() {
        ov.set("frozen", serde_json::to_value(&freeze)?);
    }
    let base = match (args.preset.as_str(), &task) {
        ("paper", _) => FinetuneConfig::default(),
        (_, Task::Tts) => FinetuneConfig::toy_tts(),
        _ => FinetuneConfig::toy(),
    };
    let fcfg: FinetuneConfig = ov.apply(&base)?;
    // synthesis trains best on about eight toy utterances per update
    let toy_speech = if matches!(task, Task::Tts) { 64_000 } else { 32_000 };
    let budgets = Budgets::resolve(&args.preset, toy_speech, &mut ov)?;
    ov.finish()?;

    let (mut model, meta, mut state) = if args.resume {
        load_resume(&args.out)?
    } else {
        let (m, meta) = Model::load(ckpt)?;
        (m, meta, TrainState::default())
    };
    let mut tok = tokenizer_from_meta(&meta)?;
    let utts = load_manifest(manifest)?;
    let corpus = load_waves(&utts)?;

    let map: Option<DialectMap> = match (&task, meta.get("dialects")) {
        (Task::Did, Some(m)) if args.resume => Some(serde_json::from_value(m.clone())?),
        (Task::Did, _) => {
            let mut labels: Vec<String> = utts.iter().filter_map(|u| u.dialect.clone()).collect();
            labels.sort();
            labels.dedup();
            if labels.is_empty() {
                return Err(CliError::Data("manifest has no dialect labels".into()));
            }
            Some(add_dialect_labels(&mut model, &mut tok, &labels, fcfg.seed))
        }
        _ => None,
    };
    let ids = encode_all(&tok, &utts)?;
    let mut k = 0;
    let items = prepare_items(
        &corpus,
        |_| {
            k += 1;
            ids[k - 1].clone()
        },
        None,
        &model.config,
        &MelConfig::default(),
    )?;
    let labels: Vec<usize> = match &map {
        Some(m) => utts
            .iter()
            .map(|u| m.index_of(u.dialect.as_deref().unwrap_or_default()))
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };

    let run = RunConfig {
        command: format!("finetune-{}", task.name()),
        preset: args.preset.clone(),
        seed: fcfg.seed,
        out: args.out.clone(),
        settings: settings(&[serde_json::to_value(&fcfg)?, budgets.json(), json!({"init": ckpt})]),
    };
    run.write(&args.out)?;

    let mut extra = json!({"tokenizer": serde_json::from_str::<Value>(&tok.to_json())?, "task": task.name()});
    if let Some(m) = &map {
        extra["dialects"] = serde_json::to_value(m)?;
    }
    let mut speech = cursor(
        items.iter().map(|i| Some(i.wave.len())).collect(),
        Modality::Speech,
        budgets.speech,
        fcfg.seed,
        state.step,
    );
    train_loop(&args.out, fcfg.max_updates, args.checkpoint_every, &mut model, &mut state, &extra, |model, state| {
        let idx = next(&mut speech)?;
        let batch: Vec<&SpeechItem> = idx.iter().map(|&i| &items[i]).collect();
        let r = match (&task, &map) {
            (Task::Asr { .. }, _) => finetune_asr_step(&batch, model, state, &fcfg)?,
            (Task::Tts, _) => finetune_tts_step(&batch, model, state, &fcfg)?,
            (Task::Did, Some(m)) => {
                let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                finetune_did_step(&batch, &y, m, model, state, &fcfg)?
            }
            (Task::Did, None) => unreachable!("dialect map is built above"),
        };
        Ok(serde_json::to_value(r)?)
    })
}

pub fn train_lm(manifest: &Path, ckpt: &Path, preset: &str, steps: Option<u64>, seed: u64, out: &Path) -> CliResult {
    let (_, meta) = Model::load(ckpt)?;
    let tok = tokenizer_from_meta(&meta)?;
    let utts = load_manifest(manifest)?;
    let ids = encode_all(&tok, &utts)?;
    let (cfg, mut tc) = match preset {
        "toy" => (LmConfig::toy(tok.len()), LmTrainConfig::toy()),
        "paper" => (LmConfig::paper(tok.len()), LmTrainConfig::default()),
        other => return Err(CliError::Usage(format!("unknown preset {other:?}"))),
    };
    tc.seed = seed;
    if let Some(s) = steps {
        tc.updates = s;
    }
    let (lm, losses) = train_char_lm(&ids, cfg, &tc)?;
    lm.save(out)?;
    let refs: Vec<&[u32]> = ids.iter().map(Vec::as_slice).collect();
    let summary = json!({
        "updates": tc.updates,
        "final_loss": losses.last(),
        "train_perplexity": lm.perplexity(&refs)?,
    });
    super::tools::write_output(None, &(summary.to_string() + "\n"))
}
