//! `platesmith`: render datasets, train and sample the diffusion model,
//! score generated plates, read them, run pseudolabel rounds and serve the
//! review API.

mod commands;
mod config;
mod data;
mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Config;

#[derive(Parser)]
#[command(name = "platesmith", version, about = "Synthetic Ukrainian license-plate toolkit")]
struct Cli {
    /// Print machine-readable JSON on stdout instead of tables.
    #[arg(long, global = true)]
    json: bool,

    /// Seed for every random choice (default: config value, else 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON config file; flags override its values.
    #[arg(long, global = true, env = "PLATESMITH_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AugmentPreset {
    None,
    Light,
    Heavy,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Mode {
    FromScratch,
    FineTune,
}

#[derive(Subcommand)]
pub enum Command {
    /// Render seeded plates with YOLO labels into a dataset directory.
    RenderDataset(RenderArgs),
    /// Train the denoiser on a dataset's images.
    Train(TrainArgs),
    /// Draw images from a trained checkpoint.
    Sample(SampleArgs),
    /// Sort generated images into success and failure categories.
    Classify(ClassifyArgs),
    /// Character, symbol and region histograms with optional comparison.
    Analyze(AnalyzeArgs),
    /// Frechet distance between two image sets on pixel features.
    Fid(FidArgs),
    /// Read plates with the template recognizer.
    Ocr(OcrArgs),
    /// One pseudolabel expansion round.
    Pseudolabel(PseudolabelArgs),
    /// Accuracy across confidence thresholds 0.1 to 0.9.
    Sweep(SweepArgs),
    /// Plate-level exact-match accuracy of predictions.
    Evaluate(EvaluateArgs),
    /// Run the annotation review service.
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub count: usize,
    /// Output size WIDTHxHEIGHT; plates are drawn at 193x72 and box-filtered.
    #[arg(long, default_value = "193x72")]
    pub size: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Items placed in the `val` split (taken first).
    #[arg(long, default_value_t = 0)]
    pub val: usize,
    #[arg(long, value_enum, default_value = "none")]
    pub augment: AugmentPreset,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Network profile (overrides the config).
    #[arg(long)]
    pub profile: Option<String>,
    /// Total optimizer steps (overrides the config).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Use the raw weights instead of the EMA copy.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Args)]
pub struct ClassifyArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Minimum per-glyph confidence for a readable plate.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Dataset directory or CSV with a `text` column.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Args)]
pub struct FidArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Side of the square grayscale thumbnail used as the feature vector.
    #[arg(long, default_value_t = 8)]
    pub features: usize,
}

#[derive(Args)]
pub struct OcrArgs {
    /// Image file, image directory or dataset directory.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Also write `id,text,min_confidence` rows to this CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PseudolabelArgs {
    /// Dataset with annotation files (the labeled set).
    #[arg(long)]
    pub labeled: PathBuf,
    /// Images to pseudolabel.
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Output dataset: labeled items plus accepted pool items.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub round: usize,
    #[arg(long, value_enum, default_value = "from-scratch")]
    pub mode: Mode,
}

#[derive(Args)]
pub struct SweepArgs {
    /// `font` for the built-in templates, or a labeled dataset to learn from.
    #[arg(long, default_value = "font")]
    pub model: String,
    /// Dataset with ground-truth texts.
    #[arg(long)]
    pub val: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Dataset directory or CSV with `id` and `text` columns.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Args)]
pub struct ServeArgs {
    /// Dataset directory holding manifest.json.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory with the review UI bundle, served at `/`.
    #[arg(long)]
    pub ui: Option<PathBuf>,
    /// Verdict log (default: verdicts.jsonl in the dataset).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

pub struct Ctx {
    pub json: bool,
    pub seed: u64,
    pub config: Config,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = Config::load(cli.config.as_deref()).and_then(|config| {
        let ctx = Ctx {
            json: cli.json,
            seed: cli.seed.or(config.seed).unwrap_or(0),
            config,
        };
        commands::run(&ctx, cli.command)
    });
    match result {
        Ok(out) => {
            let text = if cli.json {
                format!("{}\n", serde_json::to_string_pretty(&out.json).expect("reports serialize"))
            } else {
                out.human
            };
            // A closed pipe (`| head`) is not an error worth reporting.
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
        }
        Err(e) => {
            eprintln!("platesmith: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
