//! `speedrisk`: prepare AIS segments, estimate whale/ice trade-off weights
//! and run uncertainty and scenario analyses.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use speedrisk::dataset::GroupBy;
use speedrisk::ingest::IceUnit;
use speedrisk::scenarios::RiskTarget;
use speedrisk::ExecMode;

/// Exit status for configuration errors (also used by argument parsing).
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "speedrisk", version, about = "Inverse estimation of vessel speed risk trade-offs")]
struct Cli {
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true, env = "SPEEDRISK_THREADS")]
    threads: Option<usize>,

    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build segment-level observations from raw position reports.
    Prepare(PrepareArgs),
    /// Fit per-group trade-off weights.
    Estimate(EstimateArgs),
    /// Fit every candidate acoustic exponent and pick the best.
    SelectM(SelectMArgs),
    /// Stratified trajectory bootstrap around a fit.
    Bootstrap(BootstrapArgs),
    /// Correlate observed with model-implied optimal speeds.
    Validate(ValidateArgs),
    /// Optimal-speed changes under whale or ice weight perturbations.
    Sensitivity(SensitivityArgs),
    /// Per cell and month log10 ratio of mean ice to mean whale intensity.
    RatioGrid(RatioGridArgs),
    /// Generate a synthetic prepared dataset with known weights.
    Synth(SynthArgs),
    /// Generate a small raw report sample and whale grid.
    Sample(SampleArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Raw position reports (CSV).
    #[arg(long)]
    pub ais: PathBuf,
    /// Whale intensity grid (CSV: lat,lon,time_key,intensity).
    #[arg(long)]
    pub whale: PathBuf,
    /// TOML file mapping field names to input column names.
    #[arg(long)]
    pub columns: Option<PathBuf>,
    #[arg(long, default_value = "tenths")]
    pub ice_unit: IceUnit,
    /// Stationary threshold on elapsed time, hours.
    #[arg(long, default_value_t = 0.01)]
    pub dt_min: f64,
    /// Stationary threshold on displacement, km.
    #[arg(long, default_value_t = 0.05)]
    pub d_min: f64,
    /// Speed cap, knots.
    #[arg(long, default_value_t = 40.0)]
    pub v_max: f64,
    /// Output; a `.bin` extension selects the binary cache, anything else CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Prepared data (CSV or binary cache).
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct FitOptions {
    #[arg(long, default_value = "vessel_group")]
    pub group_by: GroupBy,
    /// Ridge penalty on the logits.
    #[arg(long, default_value_t = 1e-2)]
    pub lambda: f64,
    /// Speed grid spacing, knots.
    #[arg(long, default_value_t = 0.5)]
    pub grid_step: f64,
    /// Upper end of the speed grid, knots.
    #[arg(long, default_value_t = 40.0)]
    pub grid_max: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_evals: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub rel_tol: f64,
    /// Also start from the initial logits shifted by +-2.
    #[arg(long)]
    pub multistart: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitOptions,
    /// Acoustic exponent.
    #[arg(long, default_value_t = 2)]
    pub m: u32,
    /// Fit JSON output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SelectMArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub candidates: Vec<u32>,
    /// Table of objective values per exponent (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the winning fit as JSON.
    #[arg(long)]
    pub fit_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Full-data fit JSON from `estimate`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Number of replicates.
    #[arg(long = "B", visible_alias = "replicates", default_value_t = 300)]
    pub b: usize,
    /// Observations per replicate (default: min(1,000,000, dataset size)).
    #[arg(long)]
    pub n_boot: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    /// Start replicate fits from zero instead of the full-data logits.
    #[arg(long)]
    pub no_warm_start: bool,
    /// Reuse the fit's scaling constants in every replicate.
    #[arg(long)]
    pub freeze_scaling: bool,
    /// Replicate matrix output (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Interval summary (CSV); defaults to `<out>_summary.csv`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub fit: PathBuf,
    /// Weight to perturb; repeat for several (default: whale and ice).
    #[arg(long)]
    pub target: Vec<RiskTarget>,
    #[arg(long, default_value_t = 2.0)]
    pub factor: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RatioGridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 5)]
    pub min_count: usize,
    /// Winsorize at this quantile and its complement.
    #[arg(long, default_value_t = 0.01)]
    pub trim: f64,
    /// Floor on both means before the ratio.
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    /// Bin positions into square cells of this many degrees instead of
    /// using the cell_id column.
    #[arg(long)]
    pub cell_deg: Option<f64>,
    /// Produce one grid per group.
    #[arg(long)]
    pub group_by: Option<GroupBy>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Generator configuration (TOML); defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prepared rows; a `.bin` extension selects the binary cache.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground truth JSON.
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub vessels: usize,
    #[arg(long, default_value_t = 50)]
    pub pings: usize,
    /// Raw reports output (CSV).
    #[arg(long)]
    pub out_ais: PathBuf,
    /// Whale grid output (CSV).
    #[arg(long)]
    pub out_whale: PathBuf,
}

fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    let Some(n) = threads else {
        return Ok(());
    };
    if n == 0 {
        return Err(speedrisk::Error::Config("--threads must be at least 1".into()).into());
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow::anyhow!("configuring the thread pool: {e}"))?;
    Ok(())
}

/// Exit status for a failed run.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<commands::NotConverged>().is_some() {
        return EXIT_NOT_CONVERGED;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<speedrisk::Error>() {
            return match e {
                speedrisk::Error::Config(_) => EXIT_CONFIG,
                speedrisk::Error::Optimizer(_) => EXIT_NOT_CONVERGED,
                e if e.is_data_error() => EXIT_DATA,
                _ => 1,
            };
        }
        if cause.downcast_ref::<commands::BadFitFile>().is_some() {
            return EXIT_DATA;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mode = if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    let result = init_threads(cli.threads).and_then(|()| commands::run(cli.command, mode));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
