//! `cellomaps`: one binary chaining the whole pipeline, from nuclei JSON to
//! maps, tiles, training, projection, and TMB models.
//!
//! Exit codes: 0 success, 1 input error, 2 internal invariant violation.

mod commands;
mod config;
mod workers;

use clap::{Parser, Subcommand, ValueEnum};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Internal(String),
}

impl CliError {
    pub fn input(message: impl Into<String>) -> CliError {
        CliError::Input(message.into())
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Internal(m) => write!(f, "internal: {m}"),
        }
    }
}

/// Shorthand for mapping library errors onto input failures.
pub fn input<E: fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "cellomaps",
    version,
    about = "Nuclei maps, growth-pattern classification, and TMB models"
)]
pub struct Cli {
    /// Key-value config file; flags win over file values, file over defaults
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic nuclei corpus
    Synth(SynthArgs),
    /// Rasterize nuclei JSON files into bit-packed CLOM maps
    BuildMaps(BuildMapsArgs),
    /// Render a CLOM map to a PNG
    Render(RenderArgs),
    /// Per-tile Shannon entropy of a CLOM map
    Entropy(EntropyArgs),
    /// Cut maps into labeled tiles using region annotations
    Tile(TileArgs),
    /// Derive a train/val/test split plan from a tile manifest
    Split(SplitArgs),
    /// Train the growth-pattern classifier
    Train(TrainArgs),
    /// Run a trained classifier over tiles
    Predict(PredictArgs),
    /// Score predictions against manifest labels
    Eval(EvalArgs),
    /// Project predictions onto the slide grid as a colored overlay
    Project(ProjectArgs),
    /// Per-slide pattern fraction vectors from predictions
    Features(FeaturesArgs),
    /// Export the 4-neighbor tile graph of a slide as JSON
    Graph(GraphArgs),
    /// Train the TMB MLP on slide features and patient labels
    TmbTrain(TmbTrainArgs),
}

#[derive(clap::Args)]
pub struct SynthArgs {
    /// Output directory for nuclei JSON, annotations, and truth manifest
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Corpus seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tiles generated per class [default: 60]
    #[arg(long)]
    pub tiles_per_class: Option<usize>,
    /// Tile side in target pixels, one of 224/256/448/1024 [default: 224]
    #[arg(long)]
    pub tile_size: Option<u32>,
    /// Synthetic patient count [default: 12]
    #[arg(long)]
    pub patients: Option<usize>,
    /// Uniform noise fraction in [0, 0.2] [default: 0.05]
    #[arg(long)]
    pub noise_fraction: Option<f64>,
    /// Microns per pixel of the emitted coordinates [default: 0.5]
    #[arg(long)]
    pub source_mpp: Option<f64>,
    /// Microns per pixel the corpus is designed for [default: 2.0]
    #[arg(long)]
    pub target_mpp: Option<f64>,
}

#[derive(clap::Args)]
pub struct BuildMapsArgs {
    /// Nuclei JSON files
    #[arg(required = true, value_name = "NUCLEI_JSON")]
    pub inputs: Vec<PathBuf>,
    /// Output directory for .clom files and maps_manifest.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Microns per pixel to scale to [default: 2.0]
    #[arg(long)]
    pub target_mpp: Option<f64>,
    /// Comma-separated channel classes [default: NeoplasticEpithelial,NonNeoplasticEpithelial,Connective]
    #[arg(long)]
    pub channels: Option<String>,
    /// Treat Necrotic nuclei as NeoplasticEpithelial before mapping
    #[arg(long)]
    pub remap_necrotic: bool,
    /// Worker threads; results are independent of this [default: 1]
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(clap::Args)]
pub struct RenderArgs {
    /// CLOM map file
    pub map: PathBuf,
    /// Output PNG path
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
    /// Dot radius in pixels [default: 0]
    #[arg(long)]
    pub dot_radius: Option<u32>,
}

#[derive(clap::Args)]
pub struct EntropyArgs {
    /// CLOM map file
    pub map: PathBuf,
    /// Output CSV path
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// Tile side, one of 224/256/448/1024 [default: 448]
    #[arg(long)]
    pub tile: Option<u32>,
}

#[derive(clap::Args)]
pub struct TileArgs {
    /// maps_manifest.csv from build-maps
    #[arg(long, value_name = "CSV")]
    pub maps: PathBuf,
    /// Directory holding <slide_id>.annotations.json files
    #[arg(long, value_name = "DIR")]
    pub annotations: PathBuf,
    /// Output tile manifest CSV
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// Tile side, one of 224/256/448/1024 [default: 448]
    #[arg(long)]
    pub tile_size: Option<u32>,
    /// Grid stride [default: tile size]
    #[arg(long)]
    pub stride: Option<u32>,
    /// Purity threshold in (0.5, 1] [default: 0.95]
    #[arg(long)]
    pub min_overlap: Option<f64>,
    /// Drop tiles with fewer set bits than this [default: 25]
    #[arg(long)]
    pub min_nuclei: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitModeArg {
    Patient,
    Tile,
}

impl FromStr for SplitModeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<SplitModeArg, String> {
        <SplitModeArg as ValueEnum>::from_str(s, true)
    }
}

impl fmt::Display for SplitModeArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

#[derive(clap::Args)]
pub struct SplitArgs {
    /// Tile manifest CSV
    #[arg(long, value_name = "CSV")]
    pub manifest: PathBuf,
    /// Output plan JSON
    #[arg(long, value_name = "JSON")]
    pub out: PathBuf,
    /// Split granularity [default: patient]
    #[arg(long, value_enum)]
    pub mode: Option<SplitModeArg>,
    /// Patients held out for test [default: 2]
    #[arg(long)]
    pub test_patients: Option<usize>,
    /// Fraction of non-test tiles used for validation [default: 0.15]
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Split seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Focal,
    CrossEntropy,
    WeightedCrossEntropy,
}

impl FromStr for LossArg {
    type Err = String;
    fn from_str(s: &str) -> Result<LossArg, String> {
        <LossArg as ValueEnum>::from_str(s, true)
    }
}

impl fmt::Display for LossArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

#[derive(clap::Args)]
pub struct TrainArgs {
    /// maps_manifest.csv from build-maps
    #[arg(long, value_name = "CSV")]
    pub maps: PathBuf,
    /// Tile manifest CSV
    #[arg(long, value_name = "CSV")]
    pub manifest: PathBuf,
    /// Split plan JSON
    #[arg(long, value_name = "JSON")]
    pub plan: PathBuf,
    /// Output directory for checkpoint.json and training_log.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Training epochs [default: 12]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Minibatch size [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss function [default: focal]
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Focal loss gamma [default: 0.7]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Horizontal flip probability [default: 0.5]
    #[arg(long)]
    pub flip_h: Option<f64>,
    /// Vertical flip probability [default: 0.5]
    #[arg(long)]
    pub flip_v: Option<f64>,
    /// Model input channels; 1 merges all map channels (ablation) [default: map channels]
    #[arg(long)]
    pub in_channels: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SubsetArg {
    Train,
    Val,
    Test,
    All,
}

impl FromStr for SubsetArg {
    type Err = String;
    fn from_str(s: &str) -> Result<SubsetArg, String> {
        <SubsetArg as ValueEnum>::from_str(s, true)
    }
}

impl fmt::Display for SubsetArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

#[derive(clap::Args)]
pub struct PredictArgs {
    /// Classifier checkpoint JSON
    #[arg(long, value_name = "JSON")]
    pub checkpoint: PathBuf,
    /// maps_manifest.csv from build-maps
    #[arg(long, value_name = "CSV")]
    pub maps: PathBuf,
    /// Tile manifest CSV
    #[arg(long, value_name = "CSV")]
    pub manifest: PathBuf,
    /// Output predictions CSV
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// Split plan JSON restricting the tiles
    #[arg(long, value_name = "JSON")]
    pub plan: Option<PathBuf>,
    /// Subset when --plan is given [default: test; without --plan: all]
    #[arg(long, value_enum)]
    pub subset: Option<SubsetArg>,
    /// Worker threads; results are independent of this [default: 1]
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    /// Predictions CSV
    #[arg(long, value_name = "CSV")]
    pub predictions: PathBuf,
    /// Tile manifest CSV with ground-truth labels
    #[arg(long, value_name = "CSV")]
    pub manifest: PathBuf,
    /// Split plan JSON restricting the tiles
    #[arg(long, value_name = "JSON")]
    pub plan: Option<PathBuf>,
    /// Subset when --plan is given [default: test]
    #[arg(long, value_enum)]
    pub subset: Option<SubsetArg>,
}

#[derive(clap::Args)]
pub struct ProjectArgs {
    /// Predictions CSV
    #[arg(long, value_name = "CSV")]
    pub predictions: PathBuf,
    /// CLOM map of the slide being projected
    #[arg(long, value_name = "CLOM")]
    pub map: PathBuf,
    /// Output overlay PNG; legend JSON lands beside it
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
    /// Slide id to project [default: the only slide in the CSV]
    #[arg(long)]
    pub slide: Option<String>,
    /// Tile side used for the predictions [default: 448]
    #[arg(long)]
    pub tile_size: Option<u32>,
    /// Square pixels drawn per grid cell [default: 8]
    #[arg(long)]
    pub block_size: Option<u32>,
}

#[derive(clap::Args)]
pub struct FeaturesArgs {
    /// Predictions CSV
    #[arg(long, value_name = "CSV")]
    pub predictions: PathBuf,
    /// Tile manifest CSV supplying slide to patient mapping
    #[arg(long, value_name = "CSV")]
    pub manifest: PathBuf,
    /// Output features CSV
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(clap::Args)]
pub struct GraphArgs {
    /// Predictions CSV
    #[arg(long, value_name = "CSV")]
    pub predictions: PathBuf,
    /// Output graph JSON
    #[arg(long, value_name = "JSON")]
    pub out: PathBuf,
    /// Slide id to export [default: the only slide in the CSV]
    #[arg(long)]
    pub slide: Option<String>,
    /// Tile side used for the predictions [default: 448]
    #[arg(long)]
    pub tile_size: Option<u32>,
}

#[derive(clap::Args)]
pub struct TmbTrainArgs {
    /// Slide features CSV
    #[arg(long, value_name = "CSV")]
    pub features: PathBuf,
    /// TMB labels CSV (patient_id, mut_per_mb or High/Low)
    #[arg(long, value_name = "CSV")]
    pub labels: PathBuf,
    /// Output model JSON; epoch losses land beside it
    #[arg(long, value_name = "JSON")]
    pub out: PathBuf,
    /// Hidden layer width [default: 16]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Adam learning rate [default: 0.05]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Training epochs [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() {
    std::process::exit(run_process());
}

fn run_process() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match std::panic::catch_unwind(move || commands::dispatch(cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.code()
        }
        Err(_) => {
            eprintln!("error: internal invariant violation");
            2
        }
    }
}
