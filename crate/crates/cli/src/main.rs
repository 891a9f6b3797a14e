//! `tss`: generate, ingest, split, train, evaluate and apply the
//! suspended-solids image classifier.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tss", version, about = "Water quality classification by suspended solids from images")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Global seed; every stage derives its randomness from it.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic labelled dataset.
    Generate(GenerateArgs),
    /// Extract, blur-filter and crop frames from sample videos.
    Ingest(IngestArgs),
    /// Assign train/validation splits in a manifest.
    Split(SplitArgs),
    /// Fine-tune a network on a split manifest.
    Train(TrainArgs),
    /// Score a checkpoint (or stored predictions) and write reports.
    Evaluate(EvaluateArgs),
    /// Classify one image.
    Classify(ClassifyArgs),
    /// Write per-stage feature-map montages for one image.
    Featuremaps(FeaturemapsArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Images per class.
    #[arg(long, value_name = "N", allow_negative_numbers = true)]
    pub per_class: Option<usize>,
    #[arg(long, value_name = "N", allow_negative_numbers = true)]
    pub high: Option<usize>,
    #[arg(long, value_name = "N", allow_negative_numbers = true)]
    pub medium: Option<usize>,
    #[arg(long, value_name = "N", allow_negative_numbers = true)]
    pub low: Option<usize>,
    /// Side of the rendered square images in pixels.
    #[arg(long, value_name = "PX")]
    pub image_size: Option<u32>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV with columns `video,sample_id,concentration_mg_per_l`.
    #[arg(long, value_name = "CSV")]
    pub sidecar: PathBuf,
    #[arg(long, value_name = "FPS")]
    pub rate: Option<f64>,
    #[arg(long, value_name = "SCORE")]
    pub blur_threshold: Option<f64>,
    #[arg(long, value_name = "PX")]
    pub crop_side: Option<u32>,
    /// Video files (`.y4m`).
    #[arg(required = true, value_name = "VIDEO")]
    pub videos: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Stratified,
    Grouped,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "CSV")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "F")]
    pub val_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Allow classes with no rows.
    #[arg(long)]
    pub allow_missing_classes: bool,
    /// Replace an existing assignment.
    #[arg(long)]
    pub force: bool,
    /// Write here instead of updating the manifest in place.
    #[arg(long, value_name = "CSV")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NetworkArg {
    Alexnet,
    Tiny,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "CSV")]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub network: Option<NetworkArg>,
    /// Start from these weights; a head of a different width is replaced.
    #[arg(long, value_name = "PATH")]
    pub init_checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "N", allow_negative_numbers = true)]
    pub epochs: Option<usize>,
    #[arg(long, value_name = "N", allow_negative_numbers = true)]
    pub batch_size: Option<usize>,
    #[arg(long, value_name = "LR", allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitSel {
    Val,
    Train,
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "PATH", requires = "manifest", conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub manifest: Option<PathBuf>,
    /// Rows to score; defaults to the validation split when one exists.
    #[arg(long, value_enum)]
    pub split: Option<SplitSel>,
    /// Score stored predictions (`true_class,p_<class>...`) instead of a checkpoint.
    #[arg(long, value_name = "CSV", required_unless_present = "checkpoint")]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(value_name = "IMAGE")]
    pub image: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturemapsArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(value_name = "IMAGE")]
    pub image: PathBuf,
}

/// Exit status by failure class.
fn exit_code(err: &anyhow::Error) -> u8 {
    use tss_core::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<E>()) {
        Some(E::Parameter { .. }) => 2,
        Some(E::Validation(_) | E::MissingFiles(_) | E::OutOfDomain(_) | E::Csv { .. }) => 3,
        Some(E::CheckpointIncompatible { .. } | E::CheckpointCorrupt(_)) => 4,
        Some(E::Training { .. } | E::UndefinedMetric(_)) => 5,
        _ => 1,
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("tss: error: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tss: error: {}", one_line(&format!("{e:#}")));
            ExitCode::from(exit_code(&e))
        }
    }
}
