//! `emoconv`: corpus generation, training, conversion, synthesis and
//! evaluation driven by one TOML config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use emoconv::config::PipelineConfig;
use emoconv::pipeline::{self, EvalOptions, Layout, PipelineError, Stage, TrainOptions};
use emoconv::verify::{grad_check_suite, GRAD_TOLERANCE};
use emoconv::Emotion;
use serde_json::json;

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "emoconv", version, about = "Textless speech emotion conversion over discrete units")]
struct Cli {
    /// Print nothing but errors.
    #[arg(long, global = true, conflicts_with = "json")]
    quiet: bool,
    /// Print a JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Working directory holding the corpus, checkpoints and reports.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its splits.
    GenCorpus(Common),
    /// Train one stage, or all of them.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["translator", "duration", "f0", "all"])]
        stage: String,
        /// Denoising pretraining before translator fine-tuning.
        #[arg(long)]
        pretrain: bool,
        /// Accept a corpus generated from a different config.
        #[arg(long)]
        force: bool,
    },
    /// Convert the utterances of a manifest to a target emotion.
    Convert {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        emotion: Emotion,
        /// Output directory (default: <out>/converted/<emotion>).
        #[arg(long)]
        dest: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Render converted units and F0 to WAV files.
    Synth {
        #[command(flatten)]
        common: Common,
        /// A converted.tsv written by `convert`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory (default: <out>/audio).
        #[arg(long)]
        dest: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Score the trained models on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Accept artifacts produced by a different config.
        #[arg(long)]
        force: bool,
        /// Also train and score the 12 F0 binning/decoding configurations.
        #[arg(long)]
        f0_grid: bool,
    },
    /// Finite-difference gradient checks of every layer and model.
    GradCheck,
}

struct Output {
    quiet: bool,
    json: bool,
}

impl Output {
    fn say(&self, text: impl AsRef<str>) {
        if !self.quiet && !self.json {
            println!("{}", text.as_ref());
        }
    }

    fn json(&self, value: serde_json::Value) {
        if self.json {
            println!("{value}");
        }
    }
}

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME };
        Failure { code, error: e.into() }
    }
}

fn validation(error: anyhow::Error) -> Failure {
    Failure { code: EXIT_VALIDATION, error }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<PipelineConfig, Failure> {
    if !path.exists() {
        return Err(validation(anyhow::anyhow!("config file {} does not exist", path.display())));
    }
    let mut cfg = PipelineConfig::load(path).map_err(|e| Failure::from(PipelineError::from(e)))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let out = Output { quiet: cli.quiet, json: cli.json };
    match cli.command {
        Command::GenCorpus(c) => {
            let cfg = load_config(&c.config, cli.seed)?;
            let s = pipeline::gen_corpus(&cfg, &Layout::new(&c.out))?;
            out.say(format!(
                "corpus: {} utterances ({} train / {} valid / {} test), config {}",
                s.utterances, s.train, s.valid, s.test, s.config_hash
            ));
            out.json(json!(s));
        }
        Command::Train { common, stage, pretrain, force } => {
            let cfg = load_config(&common.config, cli.seed)?;
            let stage: Stage = stage.parse()?;
            let reports = pipeline::train(&cfg, &Layout::new(&common.out), stage, TrainOptions { pretrain, force })?;
            for r in &reports {
                let best = r.best_validation.map_or("-".to_string(), |v| format!("{v:.4}"));
                out.say(format!("{}: {} epochs, best validation {best} -> {}", r.stage, r.epochs, r.checkpoint.display()));
            }
            out.json(json!(reports));
        }
        Command::Convert { common, input, emotion, dest, force } => {
            let cfg = load_config(&common.config, cli.seed)?;
            let layout = Layout::new(&common.out);
            let dest = dest.unwrap_or_else(|| layout.converted_dir(emotion));
            let s = pipeline::convert(&cfg, &layout, &input, emotion, &dest, force)?;
            out.say(format!("converted {} utterances to {} -> {}", s.utterances, s.emotion, s.manifest.display()));
            out.json(json!(s));
        }
        Command::Synth { common, input, dest, force } => {
            let cfg = load_config(&common.config, cli.seed)?;
            let dest = dest.unwrap_or_else(|| common.out.join("audio"));
            let s = pipeline::synth(&cfg, &input, &dest, force)?;
            out.say(format!("wrote {} WAV files ({} samples) to {}", s.files, s.samples, s.dir.display()));
            out.json(json!(s));
        }
        Command::Evaluate { common, force, f0_grid } => {
            let cfg = load_config(&common.config, cli.seed)?;
            let layout = Layout::new(&common.out);
            let report = pipeline::evaluate(&cfg, &layout, EvalOptions { force, f0_grid })?;
            let a = &report.aggregate;
            out.say(format!(
                "{} pairs: UER {:.4}, BLEU {:.4}, F0 MAE {} Hz, duration MAE {:.3} frames -> {}",
                report.pairs.len(),
                a.uer,
                a.bleu,
                a.f0_mae_hz.map_or("-".into(), |v| format!("{v:.2}")),
                a.duration_mae_frames,
                layout.eval_dir().display()
            ));
            out.json(json!({ "eval_dir": layout.eval_dir(), "aggregate": a, "macro_average": report.macro_average }));
        }
        Command::GradCheck => {
            let seed = cli.seed.unwrap_or(1);
            let entries = grad_check_suite(seed)
                .context("gradient check could not run")
                .map_err(|error| Failure { code: EXIT_RUNTIME, error })?;
            for e in &entries {
                let verdict = if e.passed() { "ok" } else { "FAIL" };
                out.say(format!("{:<32} max rel error {:.3e}  {verdict}", e.name, e.max_rel_error));
            }
            out.json(json!({ "tolerance": GRAD_TOLERANCE, "checks": entries }));
            let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(Failure {
                    code: EXIT_RUNTIME,
                    error: anyhow::anyhow!("gradient check above {GRAD_TOLERANCE:e}: {}", failed.join(", ")),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet || cli.json { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
