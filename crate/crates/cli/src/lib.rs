//! Command implementations behind the `fasttalker` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use fasttalker::checkpoint::Checkpoint;
use fasttalker::config::{select_split, split_8_1_1, RunConfig, Split};
use fasttalker::frontend::{phonemize, read_corpus, synth_corpus, write_corpus, GESTURE_FRAME_RATE, SAMPLE_RATE};
use fasttalker::metrics::{bench_speed, evaluate_quality, MetricReport};
use fasttalker::model::FastTalker;
use fasttalker::nas::{search_loop, write_preset, ArchitectureConfig, CorpusCandidates, HistoryRecord};
use fasttalker::speech::write_wav_file;
use fasttalker::train::{TrainConfig, Trainer};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fasttalker::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        use fasttalker::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Shape { .. } => "shape",
                E::InvalidArgument(_) => "invalid_argument",
                E::NonFinite(_) => "non_finite",
                E::Phonemize(_) => "phonemize",
                E::UnknownWords(_) => "unknown_words",
                E::Alignment { .. } => "alignment",
                E::Architecture(_) => "architecture",
                E::Checkpoint(_) => "checkpoint",
                E::Config(_) => "config",
                E::Io { .. } => "io",
                E::Json(_) => "json",
                E::Wav(_) => "wav",
            },
            CliError::Io { .. } => "io",
            CliError::Usage(_) => "usage",
        }
    }

    /// `{"error": {"kind": ..., "message": ..., "words"?: [...]}}`
    pub fn to_json(&self) -> String {
        let mut err = serde_json::json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::Core(fasttalker::Error::UnknownWords(words)) = self {
            err["words"] = serde_json::json!(words);
        }
        serde_json::json!({ "error": err }).to_string()
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "fasttalker", version, about = "Joint speech and gesture synthesis with architecture search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus per-epoch losses.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Search architectures; resumes from an existing history in `--out`.
    Search {
        #[command(flatten)]
        common: Common,
        /// Emit a named preset as the result instead of searching.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Synthesize speech and motion for a text.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        /// Comma-separated frame counts, one per phoneme, replacing the predicted durations.
        #[arg(long, value_delimiter = ',')]
        durations: Option<Vec<usize>>,
    },
    /// Compute the metric report on a corpus split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Corpus to split; defaults to the one named in the checkpoint's config.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Write a synthetic corpus.
    Corpus {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = fasttalker::model::DEFAULT_VOCAB)]
        vocab: usize,
        /// Output JSONL file.
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(fasttalker::Error::from)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => cmd_train(&load_config(&common)?, &common.out).map(drop),
        Command::Search { common, preset } => cmd_search(&load_config(&common)?, &common.out, preset.as_deref()).map(drop),
        Command::Synth {
            common,
            checkpoint,
            text,
            durations,
        } => cmd_synth(&checkpoint, &text, durations.as_deref(), &common.out).map(drop),
        Command::Eval {
            common,
            checkpoint,
            split,
            corpus,
            repeats,
        } => {
            let report = cmd_eval(&checkpoint, corpus.as_deref(), split, repeats, &common.out)?;
            println!("{}", MetricReport::table_header());
            println!("{}", report.table_row());
            Ok(())
        }
        Command::Corpus {
            seed,
            samples,
            vocab,
            out,
        } => {
            let corpus = synth_corpus(seed, samples, vocab)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            write_corpus(&out, &corpus)?;
            Ok(())
        }
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.ftlk";
pub const LOSS_FILE: &str = "loss.jsonl";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const BEST_FILE: &str = "best_arch.json";
pub const WAV_FILE: &str = "speech.wav";
pub const MOTION_FILE: &str = "motion.jsonl";
pub const TIMING_FILE: &str = "timing.json";
pub const REPORT_FILE: &str = "report.json";

/// Trains on the training split; writes `checkpoint.ftlk` and `loss.jsonl`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Checkpoint> {
    cfg.validate()?;
    let samples = read_corpus(&cfg.corpus)?;
    let [train, _, _] = split_8_1_1(&samples);
    create_dir(out)?;
    let model = FastTalker::new(cfg.arch.resolve()?, cfg.model.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), cfg.seed)?;
    let loss_path = out.join(LOSS_FILE);
    let mut log = fs::File::create(&loss_path).map_err(io_err(&loss_path))?;
    let mut write_err = None;
    trainer.fit_with(&train, |rec| {
        let line = serde_json::to_string(rec).expect("epoch records serialize");
        if let Err(e) = writeln!(log, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(&loss_path)(e));
    }
    let ck = Checkpoint::capture(&trainer, cfg);
    ck.save(&out.join(CHECKPOINT_FILE))?;
    Ok(ck)
}

/// Runs (or resumes) the search, writing `history.jsonl` and
/// `best_arch.json`. With a preset, only the preset file is written.
pub fn cmd_search(cfg: &RunConfig, out: &Path, preset: Option<&str>) -> Result<ArchitectureConfig> {
    cfg.validate()?;
    create_dir(out)?;
    let best_path = out.join(BEST_FILE);
    if let Some(name) = preset {
        let arch = ArchitectureConfig::preset(name)?;
        write_preset(&best_path, &arch)?;
        return Ok(arch);
    }
    let samples = read_corpus(&cfg.corpus)?;
    let [train, validation, _] = split_8_1_1(&samples);
    if validation.len() < 2 {
        return Err(CliError::Usage(format!(
            "search needs at least 2 validation samples; {} has {} samples in total",
            cfg.corpus.display(),
            samples.len()
        )));
    }
    let candidates = CorpusCandidates {
        train,
        validation,
        options: cfg.model.clone(),
        train_config: TrainConfig {
            epochs: cfg.nas.candidate_epochs,
            ..cfg.train.clone()
        },
    };
    let outcome = search_loop(
        &cfg.nas.space,
        &cfg.nas.search_config(),
        cfg.seed,
        &candidates,
        &candidates,
        Some(&out.join(HISTORY_FILE)),
    )?;
    write_preset(&best_path, &outcome.best)?;
    Ok(outcome.best)
}

/// Reads a history file written by `search`.
pub fn read_history(path: &Path) -> Result<Vec<HistoryRecord>> {
    Ok(fasttalker::nas::read_history(path)?)
}

#[derive(Debug, Serialize)]
struct MotionFrame<'a> {
    t: usize,
    time: f64,
    code: usize,
    pose: &'a [f64],
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub generation_seconds: f64,
    pub audio_seconds: f64,
    pub sec_per_sec: f64,
}

/// Writes `speech.wav`, `motion.jsonl` and `timing.json`.
pub fn cmd_synth(checkpoint: &Path, text: &str, durations: Option<&[usize]>, out: &Path) -> Result<Timing> {
    let model = Checkpoint::load(checkpoint)?.model()?;
    let seq = phonemize(text)?;
    create_dir(out)?;
    let start = Instant::now();
    let gen = model.synthesize(&seq, durations)?;
    let generation_seconds = start.elapsed().as_secs_f64();
    write_wav_file(&out.join(WAV_FILE), &gen.waveform)?;
    let motion_path = out.join(MOTION_FILE);
    let mut lines = String::new();
    if let Some(m) = &gen.motion {
        for t in 0..m.rows() {
            let frame = MotionFrame {
                t,
                time: t as f64 / GESTURE_FRAME_RATE as f64,
                code: gen.codes[t],
                pose: m.row(t),
            };
            lines.push_str(&serde_json::to_string(&frame).map_err(fasttalker::Error::from)?);
            lines.push('\n');
        }
    }
    fs::write(&motion_path, lines).map_err(io_err(&motion_path))?;
    let audio_seconds = gen.waveform.len() as f64 / SAMPLE_RATE as f64;
    let timing = Timing {
        generation_seconds,
        audio_seconds,
        sec_per_sec: generation_seconds / audio_seconds,
    };
    write_json(&out.join(TIMING_FILE), &timing)?;
    Ok(timing)
}

/// Computes the metric report on one split and writes `report.json`.
pub fn cmd_eval(checkpoint: &Path, corpus: Option<&Path>, split: Split, repeats: usize, out: &Path) -> Result<MetricReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.model()?;
    let corpus = corpus.map(Path::to_path_buf).unwrap_or_else(|| ck.config.corpus.clone());
    let samples = select_split(&read_corpus(&corpus)?, split);
    if samples.is_empty() {
        return Err(CliError::Usage(format!("the {split:?} split of {} is empty", corpus.display())));
    }
    let mut report = evaluate_quality(&model, &samples)?;
    let script: Vec<_> = samples.iter().map(|s| s.phonemes.clone()).collect();
    report.sec_per_sec = bench_speed(&model, &script, repeats)?;
    create_dir(out)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}
