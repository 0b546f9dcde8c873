//! Command-line front end. Every subcommand writes its outputs and a
//! `command.json` echo (arguments, resolved inputs, version) into a run
//! directory. Failures exit nonzero and print
//! `{"error": <category>, "message": ...}` to stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "wavemae", version, about = "Wavelet masked autoencoder toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic geo-tagged dataset of MSR files.
    Synth(SynthArgs),
    /// Decompose an MSR raster into wavelet components.
    Dwt(DwtArgs),
    /// Rebuild a raster from a component directory written by `dwt`.
    Idwt(IdwtArgs),
    /// Pretrain a model and write metrics and checkpoints.
    Pretrain(PretrainArgs),
    /// Cosine similarity of geo encodings against great-circle distance.
    EvalGpePairs(PairsArgs),
    /// Embedding distances over anchor/positive/negative tuples.
    EvalGpeTuples(TuplesArgs),
    /// Dense feature map of one image from intermediate encoder layers.
    Features(FeaturesArgs),
    /// Masked reconstruction errors and PSNR for one image.
    Reconstruct(ReconstructArgs),
    /// Compare reverse-mode gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Serialize)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Run config whose `synth` section is used; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Wavelet depth the images must support.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Strength of the latitude-dependent spectral offset.
    #[arg(long)]
    pub geo_signal: Option<f64>,
    /// Amplitude of the category texture.
    #[arg(long)]
    pub texture_strength: Option<f64>,
}

#[derive(Args, Serialize)]
pub struct DwtArgs {
    /// Input MSR file.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of levels.
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    /// Output directory for component files and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct IdwtArgs {
    /// Component directory written by `dwt`.
    #[arg(long)]
    pub input: PathBuf,
    /// Output MSR file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct PretrainArgs {
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Run config (JSON); defaults apply for anything not given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of MSR samples; overrides the config. Without one the
    /// config's `synth` section is generated.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
}

#[derive(Args, Serialize)]
pub struct PairsArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint providing the learned projection.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Use raw spherical-harmonics vectors instead of the projection.
    #[arg(long)]
    pub raw: bool,
    /// Degree cutoff for raw vectors.
    #[arg(long, default_value_t = 27)]
    pub cutoff: usize,
    #[arg(long, default_value_t = 2000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Serialize)]
pub struct TuplesArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub tuples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also run a sign-flip test of the per-tuple margins with this many flips.
    #[arg(long, default_value_t = 2000)]
    pub permutations: usize,
}

#[derive(Args, Serialize)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input MSR file.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated 0-based encoder blocks; defaults to the configured subset.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
}

#[derive(Args, Serialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to evaluate; `--oracle` or `--zero` replace the model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.75)]
    pub mask_ratio: f64,
    /// Predict the true components (requires --levels and --base-patch).
    #[arg(long, conflicts_with_all = ["zero", "checkpoint"])]
    pub oracle: bool,
    /// Predict zeros (requires --levels and --base-patch).
    #[arg(long, conflicts_with_all = ["oracle", "checkpoint"])]
    pub zero: bool,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    #[arg(long, default_value_t = 16)]
    pub base_patch: usize,
    /// Write the reconstruction and predicted components as MSR files.
    #[arg(long)]
    pub dump: bool,
}

#[derive(Args, Serialize)]
pub struct GradcheckArgs {
    /// Output directory for report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-2)]
    pub step: f64,
    /// Relative-error denominator floor.
    #[arg(long, default_value_t = 1e-6)]
    pub floor: f64,
    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            commands::report_error("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Dwt(a) => commands::dwt(a),
        Command::Idwt(a) => commands::idwt(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::EvalGpePairs(a) => commands::pairs(a),
        Command::EvalGpeTuples(a) => commands::tuples(a),
        Command::Features(a) => commands::features(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            commands::report_error(e.category(), &e.message());
            ExitCode::from(1)
        }
    }
}
