//! Command-line front end: prepare a reference, train detectors, track a
//! performance, evaluate a trace and synthesize test material.

mod bundle;
mod commands;
mod config;
mod error;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use opera_follow::control::Variant;
use opera_follow::features::DetectorKind;

/// Environment variable holding the log filter, e.g. `debug` or
/// `opera_follow=trace`.
pub const LOG_ENV: &str = "OPERA_FOLLOW_LOG";

#[derive(Debug, Parser)]
#[command(name = "opera-follow", version, about = "Follow a live opera performance against an annotated reference recording")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract reference features and voice flags into a bundle directory.
    PrepareReference(PrepareArgs),
    /// Train one event detector from labeled WAV files.
    TrainDetector(TrainArgs),
    /// Track a target recording against a prepared reference.
    Track(TrackArgs),
    /// Score a trace against bar annotations.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic scenario or a labeled detector corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Reference recording (WAV).
    #[arg(long)]
    pub audio: PathBuf,
    /// Bar annotations, `bar_index,time_s`.
    #[arg(long)]
    pub bars: PathBuf,
    /// Section table, `section_id,start_bar,ref_start_s,voice_start`.
    #[arg(long)]
    pub sections: PathBuf,
    /// Speech detector used to recompute the voice flags.
    #[arg(long)]
    pub speech_model: Option<PathBuf>,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Largest allowed overrun of the annotations past the audio end.
    #[arg(long, default_value_t = 2.0)]
    pub max_overrun_s: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_kind)]
    pub kind: DetectorKind,
    /// Directory of `name.wav` + `name.csv` label pairs.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Fraction of clips (by name order, from the end) held out for validation.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Stop early once held-out accuracy reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Bundle written by `prepare-reference`.
    #[arg(long)]
    pub reference: PathBuf,
    /// Target recording (WAV).
    #[arg(long)]
    pub target: PathBuf,
    /// Trace CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// base, a, as or asi; sets all three gates.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub window_s: Option<f64>,
    /// Directory holding applause.model, music.model and speech.model.
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub applause_model: Option<PathBuf>,
    #[arg(long)]
    pub music_model: Option<PathBuf>,
    #[arg(long)]
    pub speech_model: Option<PathBuf>,
    /// Pace the input at wall-clock speed and report step latencies.
    #[arg(long)]
    pub realtime: bool,
    #[arg(long)]
    pub trace_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub target_bars: PathBuf,
    #[arg(long)]
    pub ref_bars: PathBuf,
    /// Report JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-bar error CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["script", "preset", "corpus"])))]
pub struct SynthArgs {
    /// Scenario script (JSON).
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Built-in scenario: jump-1 .. jump-4.
    #[arg(long)]
    pub preset: Option<String>,
    /// Write a labeled detector training corpus instead of a scenario.
    #[arg(long)]
    pub corpus: bool,
    #[arg(long, default_value_t = 30.0, requires = "corpus")]
    pub minutes_per_class: f64,
    #[arg(long, default_value_t = 10.0, requires = "corpus")]
    pub silence_minutes: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_kind(s: &str) -> Result<DetectorKind, String> {
    DetectorKind::ALL
        .into_iter()
        .find(|k| k.to_string().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown detector kind {s:?} (expected applause, music or speech)"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::PrepareReference(a) => commands::prepare_reference(&a),
        Command::TrainDetector(a) => commands::train_detector(&a),
        Command::Track(a) => commands::track(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("{f}");
            ExitCode::from(f.kind.exit_code() as u8)
        }
    }
}
