//! `vmtlab`: corpus construction, filtering, statistics, evaluation and
//! video-guided translation from one binary.

mod config;
mod data;
mod io;
mod model;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "vmtlab", version, about = "Video-guided machine translation toolkit")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn bilingual subtitle files into a clip-aligned corpus.
    Build(data::BuildArgs),
    /// Drop pairs that fail too many quality-estimation thresholds.
    Filter(data::FilterArgs),
    /// N-gram, part-of-speech and category statistics of a corpus.
    Stats(data::StatsArgs),
    /// Score hypotheses with BLEU and the terminology metrics.
    Eval(data::EvalArgs),
    /// Train a model on the training split of a corpus.
    Train(model::TrainArgs),
    /// Decode records with a trained checkpoint.
    Translate(model::TranslateArgs),
    /// Compare congruent and incongruent (mismatched video) decoding.
    Probe(model::ProbeArgs),
    /// Write a synthetic ambiguous-term corpus with features.
    Synth(model::SynthArgs),
}

/// Options shared by commands that write one primary output.
#[derive(Args, Clone, Debug)]
pub struct OutputArg {
    /// Output file; standard output when omitted.
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Build(a) => data::build(a, &cfg),
        Command::Filter(a) => data::filter(a, &cfg),
        Command::Stats(a) => data::stats(a, &cfg),
        Command::Eval(a) => data::eval(a, &cfg),
        Command::Train(a) => model::train(a, &cfg),
        Command::Translate(a) => model::translate(a, &cfg),
        Command::Probe(a) => model::probe(a, &cfg),
        Command::Synth(a) => model::synth(a, &cfg),
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    use vmtlab_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Parse { .. } => "parse",
                E::Schema { .. } => "schema",
                E::Config(_) => "config",
                E::InvalidInput(_) => "invalid_input",
                E::MissingScore { .. } => "missing_score",
                E::Shape(_) => "shape",
                E::NonFiniteGradient(_) => "non_finite_gradient",
                E::Checkpoint(_) => "checkpoint",
                E::Io(_) => "io",
                E::Json(_) => "json",
            };
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<serde_json::Error>() {
            return "json";
        }
    }
    "error"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let report = serde_json::json!({
                "error": error_kind(&err),
                "message": format!("{err:#}"),
            });
            eprintln!("{report}");
            ExitCode::from(1)
        }
    }
}
