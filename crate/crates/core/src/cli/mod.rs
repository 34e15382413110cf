//! Command-line entry point. Every subcommand is a thin layer over the
//! library; `run` maps failures to exit codes (2 usage, 3 data, 4 numeric).

mod config;
mod infer;
mod tools;
mod train;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::metrics::Level;

pub use config::RunConfig;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (checkpoint format 1, unit model format 1)"
);

#[derive(Parser)]
#[command(name = "sawt", version = VERSION, about = "Arabic speech/text encoder-decoder toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Flat JSON file of config overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "toy")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of updates (overrides max_updates).
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Save a checkpoint every N updates (0: only at the end).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    /// Continue from the checkpoint in --out.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize Arabic text line by line.
    Normalize {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Transliterate between Arabic script and Buckwalter.
    Translit {
        #[arg(long, conflicts_with = "from_bw", required_unless_present = "from_bw")]
        to_bw: bool,
        #[arg(long)]
        from_bw: bool,
        /// Two-column mapping file replacing the built-in table.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Build a character tokenizer from text lines.
    BuildVocab {
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one log-mel archive per manifest entry.
    ExtractMels {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster mel frames into discrete units.
    FitUnits {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 500)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign unit labels with a fitted cluster model.
    Label {
        model: PathBuf,
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic tonal corpus.
    MakeToy {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        dialects: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop long (and optionally overlapping) utterances.
    FilterManifest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 40.0)]
        max_dur: f64,
        #[arg(long)]
        drop_overlap: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Joint self-supervised pre-training.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        units: PathBuf,
        /// Tokenizer file; built from the manifest when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Fine-tune for recognition with CTC.
    FinetuneAsr {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Weight of the auxiliary decoder cross-entropy.
        #[arg(long)]
        ce_weight: Option<f64>,
        /// Parameter-name prefix to hold fixed (repeatable).
        #[arg(long)]
        freeze: Vec<String>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Fine-tune for synthesis.
    FinetuneTts {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        freeze: Vec<String>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Fine-tune the first-step dialect classifier.
    FinetuneDid {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        freeze: Vec<String>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the character language model used for fusion.
    TrainLm {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint whose tokenizer the model shares.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "toy")]
        preset: String,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a manifest to JSONL {id, hyp, score}.
    Transcribe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Beam width; 0 decodes greedily.
        #[arg(long, default_value_t = crate::tasks::DEFAULT_BEAM)]
        beam: usize,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long = "lambda", default_value_t = crate::tasks::DEFAULT_LM_WEIGHT)]
        lm_weight: f64,
        #[arg(long, default_value_t = 0.0)]
        length_bonus: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate speech from text as a WAV file or a mel archive.
    Synthesize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, conflicts_with = "file", required_unless_present = "file")]
        text: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        max_frames: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// `.wav` writes audio; anything else writes the mel archive.
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify the dialect of each manifest entry.
    Classify {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score hypotheses against references.
    Evaluate {
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long, value_enum, default_value_t = Level::Word)]
        level: Level,
        /// Skip normalization of both sides.
        #[arg(long)]
        raw: bool,
        /// Drop spaces from the character stream.
        #[arg(long)]
        no_spaces: bool,
    },
    /// Print parameter counts per sub-network.
    Describe {
        #[arg(long, default_value = "toy")]
        preset: String,
        #[arg(long, default_value_t = 130)]
        vocab: usize,
    },
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Data(m) => ("data", m),
            CliError::Numeric(m) => ("numeric", m),
        };
        serde_json::json!({"error": kind, "message": msg}).to_string()
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_error!(
    std::io::Error,
    serde_json::Error,
    crate::text::TextError,
    crate::audio::AudioError,
    crate::corpus::CorpusError,
    crate::model::ModelError,
    crate::metrics::MetricsError
);

impl From<crate::pretrain::PretrainError> for CliError {
    fn from(e: crate::pretrain::PretrainError) -> Self {
        match e {
            crate::pretrain::PretrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            crate::pretrain::PretrainError::BadConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<crate::tasks::TaskError> for CliError {
    fn from(e: crate::tasks::TaskError) -> Self {
        match e {
            crate::tasks::TaskError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult = Result<(), CliError>;

/// Parse `argv` (program name first), run the subcommand, and return the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    let first = e.to_string().lines().next().unwrap_or_default().to_string();
                    eprintln!("{}", CliError::Usage(first).line());
                    2
                }
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.code()
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Normalize { input } => tools::normalize(input),
        Command::Translit {
            to_bw,
            from_bw: _,
            table,
            input,
        } => tools::translit(to_bw, table, input),
        Command::BuildVocab { base, input, out } => tools::build_vocab(base, input, out),
        Command::ExtractMels { manifest, out } => tools::extract_mels(&manifest, &out),
        Command::FitUnits { manifest, k, seed, out } => tools::fit_units(&manifest, k, seed, &out),
        Command::Label { model, manifest, out } => tools::label(&model, &manifest, out),
        Command::MakeToy { seed, n, dialects, out } => tools::make_toy(seed, n, dialects, &out),
        Command::FilterManifest {
            manifest,
            max_dur,
            drop_overlap,
            out,
        } => tools::filter_manifest(&manifest, max_dur, drop_overlap, &out),
        Command::Pretrain {
            manifest,
            units,
            vocab,
            train,
        } => train::pretrain(&manifest, &units, vocab, &train),
        Command::FinetuneAsr {
            ckpt,
            manifest,
            ce_weight,
            freeze,
            train,
        } => train::finetune(train::Task::Asr { ce_weight }, &ckpt, &manifest, freeze, &train),
        Command::FinetuneTts {
            ckpt,
            manifest,
            freeze,
            train,
        } => train::finetune(train::Task::Tts, &ckpt, &manifest, freeze, &train),
        Command::FinetuneDid {
            ckpt,
            manifest,
            freeze,
            train,
        } => train::finetune(train::Task::Did, &ckpt, &manifest, freeze, &train),
        Command::TrainLm {
            manifest,
            ckpt,
            preset,
            steps,
            seed,
            out,
        } => train::train_lm(&manifest, &ckpt, &preset, steps, seed, &out),
        Command::Transcribe {
            ckpt,
            manifest,
            beam,
            lm,
            lm_weight,
            length_bonus,
            out,
        } => infer::transcribe(&ckpt, &manifest, beam, lm, lm_weight, length_bonus, out),
        Command::Synthesize {
            ckpt,
            text,
            file,
            max_frames,
            threshold,
            out,
        } => infer::synthesize(&ckpt, text, file, max_frames, threshold, &out),
        Command::Classify { ckpt, manifest, out } => infer::classify(&ckpt, &manifest, out),
        Command::Evaluate {
            refs,
            hyps,
            level,
            raw,
            no_spaces,
        } => infer::evaluate(&refs, &hyps, level, raw, no_spaces),
        Command::Describe { preset, vocab } => {
            let cfg = crate::model::ModelConfig::preset(&preset, vocab)
                .ok_or_else(|| CliError::Usage(format!("unknown preset {preset:?}")))?;
            print!("{}", crate::model::describe(&cfg));
            Ok(())
        }
    }
}
