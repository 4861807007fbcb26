//! Command-line surface. Every tunable can also come from a `key = value`
//! config file (`--config`); explicit flags win over the file, which wins
//! over preset-adjusted defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "stnn",
    version,
    about = "Joint travel time and distance estimation for taxi trips"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic trips with analytically known answers.
    Simulate(SimulateArgs),
    /// Parse a trip CSV, reject outliers, and write the binary trip cache.
    Ingest(IngestArgs),
    /// Train a model and write it with its loss history and test split.
    Train(TrainArgs),
    /// Evaluate a trained model: report, prediction dump, curves, ECDFs.
    Eval(EvalArgs),
    /// Answer one origin/destination/time query with a trained model.
    Predict(PredictArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Flat `key = value` config file; flags override its entries.
    #[arg(long, global = false)]
    pub config: Option<PathBuf>,

    /// Bounding box as `lat_min,lat_max,lon_min,lon_max`.
    #[arg(long)]
    pub bbox: Option<String>,

    /// Grid cell edge length in meters.
    #[arg(long)]
    pub cell_size_m: Option<f64>,

    /// Time cell length in seconds (must divide 86400).
    #[arg(long)]
    pub time_cell_s: Option<u32>,

    /// Seed for every random choice in the command.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Named parameter preset: `default` or `manhattan` (50 m cells,
    /// 60-minute time cells; requires an explicit --bbox).
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Number of trips to generate.
    #[arg(long)]
    pub trips: Option<usize>,

    /// Output CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Fraction of rows corrupted into filter-rejectable anomalies.
    #[arg(long)]
    pub outlier_rate: Option<f64>,

    /// Lognormal noise sigma on travel time (0 = deterministic).
    #[arg(long)]
    pub noise_sigma: Option<f64>,

    /// Street-network inflation over straight-line distance.
    #[arg(long)]
    pub detour_factor: Option<f64>,

    /// Seconds added per grid-cell boundary crossed.
    #[arg(long)]
    pub boundary_delay_s: Option<f64>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Input trip CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Output binary trip cache path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Model kind: stnn, lrt, lrd, timenn, distnn.
    #[arg(long)]
    pub model: Option<String>,

    /// Input trips (CSV or binary cache, detected by content).
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Output model file.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub learning_rate: Option<f64>,

    /// Held-out fraction (0 disables the split).
    #[arg(long)]
    pub test_fraction: Option<f64>,

    /// Distance-module hidden widths, comma separated.
    #[arg(long)]
    pub dist_hidden: Option<String>,

    /// Time-module hidden widths, comma separated.
    #[arg(long)]
    pub time_hidden: Option<String>,

    /// Hidden activation: relu or tanh.
    #[arg(long)]
    pub activation: Option<String>,

    /// Optimize in raw target units (seconds/miles) instead of z-scores.
    #[arg(long)]
    pub raw_loss: bool,

    /// Feed raw cell corners instead of standardized features.
    #[arg(long)]
    pub no_standardize_features: bool,

    /// Keep the time loss out of the distance module (ablation).
    #[arg(long)]
    pub freeze_dist_path: bool,

    /// Loss history CSV path (default: `<out>.history.csv`).
    #[arg(long)]
    pub history_out: Option<PathBuf>,

    /// Held-out split cache path (default: `<out>.test.sttr`).
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Trained model file.
    #[arg(long)]
    pub model_file: Option<PathBuf>,

    /// Trips to evaluate on (CSV or binary cache).
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Directory for report, prediction dump, curves, and ECDFs.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,

    /// Skip outlier filtering (rows that cannot be featurized are dropped
    /// and counted; metrics whose preconditions fail print as n/a).
    #[arg(long)]
    pub keep_outliers: bool,

    /// Bin width (seconds) for the MAE-vs-travel-time curve.
    #[arg(long)]
    pub time_curve_bin_s: Option<f64>,

    /// Bin width (miles) for the MAE-vs-travel-distance curve.
    #[arg(long)]
    pub dist_curve_bin_mi: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Trained model file.
    #[arg(long)]
    pub model_file: Option<PathBuf>,

    /// Origin as `lat,lon`.
    #[arg(long)]
    pub origin: Option<String>,

    /// Destination as `lat,lon`.
    #[arg(long)]
    pub dest: Option<String>,

    /// Pickup time `YYYY-MM-DD HH:MM:SS`.
    #[arg(long)]
    pub time: Option<String>,
}
