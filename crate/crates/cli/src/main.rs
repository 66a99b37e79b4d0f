mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::config::List;
use crate::error::CliError;

/// Rate-adaptive compressive sensing: train, sweep and simulate.
///
/// Every option can also be set in an INI file passed with --config; flags
/// take precedence. Exit codes: 1 usage, 2 config, 3 data, 4 numeric failure.
#[derive(Parser, Debug)]
#[command(name = "racs", version)]
struct Cli {
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write model.racs and train_log.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint at every prefix length in a range.
    Sweep(SweepArgs),
    /// Run a rate controller over a sequence of frames.
    AdaptSim(AdaptArgs),
    /// Classify blocks with a classifier checkpoint.
    Classify(ClassifyArgs),
    /// Write the rows of Φ as images plus raw and 9-bit exports.
    ExportPhi(ExportArgs),
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Directory of PGM images; subdirectories are taken as classes.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic set instead of a directory: dct-lowpass or shapes.
    #[arg(long)]
    synth: Option<String>,
    /// Number of synthetic blocks.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    synth_seed: Option<u64>,
    /// Step between blocks cut from directory images (default: block side).
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// rate-adaptive, vanilla or gaussian-fixed.
    #[arg(long)]
    mode: Option<String>,
    /// reconnet, autoencoder or classifier.
    #[arg(long)]
    head: Option<String>,
    /// Block side b; signals have n = b² pixels.
    #[arg(long)]
    block: Option<usize>,
    /// ReconNet refinement units.
    #[arg(long)]
    units: Option<usize>,
    /// Channel counts, e.g. 64,32.
    #[arg(long)]
    channels: Option<List>,
    /// ReconNet kernel sides, e.g. 11,1,7.
    #[arg(long)]
    kernels: Option<List>,
    /// Classifier kernel side.
    #[arg(long)]
    kernel: Option<usize>,
    /// Hidden width (autoencoder default: m_max).
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    /// Iteration budget preset: desk or paper.
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long = "max-iters-1")]
    max_iters_1: Option<usize>,
    #[arg(long = "max-iters-2")]
    max_iters_2: Option<usize>,
    #[arg(long)]
    iters_per_row: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    val_interval: Option<usize>,
    /// Adam moment reset: per-subproblem or never.
    #[arg(long)]
    reset: Option<String>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug, Default)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Smallest prefix (default: the checkpoint's k_min).
    #[arg(long)]
    r_min: Option<usize>,
    /// Largest prefix (default: the checkpoint's m_max).
    #[arg(long)]
    r_max: Option<usize>,
    /// CSV path (default: <out>/sweep.csv).
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug, Default)]
struct AdaptArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of PGM frames, played in file-name order.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// linear, framediff or confidence.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Rows added or removed per step.
    #[arg(long, visible_alias = "delta")]
    delta_rows: Option<usize>,
    #[arg(long)]
    r_start: Option<usize>,
    #[arg(long)]
    r_end: Option<usize>,
    #[arg(long)]
    total_frames: Option<usize>,
    /// Lower rate bound (default: the checkpoint's k_min).
    #[arg(long)]
    k_min: Option<usize>,
    /// Upper rate bound (default: the checkpoint's m_max).
    #[arg(long)]
    m_max: Option<usize>,
    /// Frame difference source: reconstructed or ground-truth.
    #[arg(long)]
    diff_source: Option<String>,
    /// Text file with one confidence score per frame.
    #[arg(long)]
    confidence: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct ClassifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Prefix length (default: the checkpoint's m_max).
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug, Default)]
struct ExportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::AdaptSim(a) => commands::adapt_sim(a),
        Command::Classify(a) => commands::classify(a),
        Command::ExportPhi(a) => commands::export_phi(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("racs: {message}");
            ExitCode::from(code)
        }
    }
}
