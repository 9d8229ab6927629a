//! `microseg` command-line front end.

mod commands;
mod io;
mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "microseg",
    version,
    about = "Micrograph segmentation and microstructure metrology"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Seed for every stochastic stage.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for per-image work (0 = available parallelism).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic micrograph/label pairs and a manifest.
    Synth(SynthArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Predict label maps for the images of a manifest.
    Predict(PredictArgs),
    /// Per-class precision, recall and IU against ground truth.
    Evaluate(EvaluateArgs),
    /// k-fold cross-validation.
    Crossval(CrossvalArgs),
    /// Particle size distribution from particle label maps.
    Psd(PsdArgs),
    /// Denuded-zone width distribution from microconstituent label maps.
    Dzone(DzoneArgs),
    /// Keep particle predictions only inside predicted spheroidite.
    Fuse(FuseArgs),
    /// Two-sample Kolmogorov-Smirnov test on measured distributions.
    Ks(KsArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SceneKind {
    Microconstituent,
    Particle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Focal,
    Ce,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene parameters (JSON); missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SceneKind::Microconstituent)]
    pub kind: SceneKind,
    /// Number of scenes.
    #[arg(long, default_value_t = 24)]
    pub count: usize,
    /// Square image size in pixels; overrides the config.
    #[arg(long)]
    pub size: Option<usize>,
    /// Tag the last N scenes `test` (the rest `train`) and write split manifests.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Experiment configuration (JSON with `net`, `train`, `loss`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the loss kind of the configuration.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, default_value = "microconstituent")]
    pub taxonomy: String,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Class palette to predict into; must match the checkpoint.
    #[arg(long, default_value = "microconstituent")]
    pub taxonomy: String,
    /// Pixels per dense-prediction tile.
    #[arg(long, default_value_t = 16384)]
    pub tile_pixels: usize,
    /// Also write one 8-bit probability map per class.
    #[arg(long)]
    pub probabilities: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Ground-truth manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest whose label paths are predictions, in ground-truth order.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    pub predictions: Option<PathBuf>,
    /// Predict with this checkpoint instead of reading predictions.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "microconstituent")]
    pub taxonomy: String,
}

#[derive(Args, Debug)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, default_value_t = 6)]
    pub folds: usize,
    #[arg(long, default_value = "microconstituent")]
    pub taxonomy: String,
}

#[derive(Args, Debug)]
pub struct PsdArgs {
    /// Manifest whose label paths are particle (or microconstituent) maps.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "particle")]
    pub taxonomy: String,
    /// Drop particles smaller than this many pixels (1 keeps everything).
    #[arg(long, default_value_t = 1)]
    pub min_area: usize,
    /// Pixel connectivity, 4 or 8.
    #[arg(long, default_value_t = 8)]
    pub connectivity: u8,
    /// Keep particles that touch the image border.
    #[arg(long)]
    pub keep_border: bool,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Args, Debug)]
pub struct DzoneArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub closing_radius: usize,
    /// Network components smaller than this become spheroidite first.
    #[arg(long, default_value_t = 0)]
    pub min_network_size: usize,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// Manifest of particle label maps.
    #[arg(long)]
    pub particles: PathBuf,
    /// Manifest of microconstituent label maps, same order.
    #[arg(long)]
    pub microconstituents: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct KsArgs {
    /// First sample: CSV or one value per line.
    #[arg(long, requires = "b", conflicts_with = "pairs")]
    pub a: Option<PathBuf>,
    #[arg(long, requires = "a")]
    pub b: Option<PathBuf>,
    /// JSON list of `[a, b]` file pairs; reports the consistency score.
    #[arg(long, required_unless_present = "a")]
    pub pairs: Option<PathBuf>,
    /// CSV column to read when the files have a header.
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub significance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
