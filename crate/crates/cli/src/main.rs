mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "lsvd", version, about = "Channel-wise SVD editing and analysis of latent codes")]
pub struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic Gaussian latent.
    Gen(GenArgs),
    /// Train a singular value predictor on latent pairs.
    Train(TrainArgs),
    /// Edit x toward z.
    Edit(EditArgs),
    /// Write edits for evenly spaced rho values.
    Interpolate(InterpolateArgs),
    /// Spectral analysis reports.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, num_args = 3, value_names = ["C", "H", "W"], default_values_t = [4, 64, 64])]
    pub shape: Vec<usize>,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub std: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mean: f64,
    #[arg(long)]
    pub time_step: Option<u32>,
    #[arg(long, default_value_t = lsvd_core::latent::DEFAULT_TOTAL_STEPS)]
    pub total_steps: u32,
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Source latent; repeat together with --z for several pairs.
    #[arg(long, required = true)]
    pub x: Vec<PathBuf>,
    /// Attribute latent paired with the --x at the same position.
    #[arg(long, required = true)]
    pub z: Vec<PathBuf>,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Samples per pair [default: 5000, or 500 beyond five pairs].
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = lsvd_core::trainer::DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long, default_value_t = lsvd_core::avi::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = lsvd_core::trainer::DEFAULT_BATCH)]
    pub batch: usize,
    #[arg(long, default_value_t = lsvd_core::trainer::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = lsvd_core::trainer::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lambda3: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lambda4: f64,
    /// Hidden width [default: H*W].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Per-step loss history CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Fill the wall_ms history column (otherwise 0, keeping output reproducible).
    #[arg(long)]
    pub record_wall_time: bool,
}

#[derive(Args, Debug)]
pub struct PredictorArgs {
    #[arg(long, required_unless_present = "identity_s")]
    pub model: Option<PathBuf>,
    /// Use S = S_x and zero delta instead of a model.
    #[arg(long)]
    pub identity_s: bool,
}

#[derive(Args, Debug)]
pub struct EditArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub z: PathBuf,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = lsvd_core::avi::DEFAULT_K)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub z: PathBuf,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[arg(long, default_value_t = 0.0)]
    pub rho_start: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho_end: f64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(2..))]
    pub steps: u32,
    #[arg(long, default_value_t = lsvd_core::avi::DEFAULT_K)]
    pub k: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Geodesic distances between leading singular subspaces.
    Geodesic(GeodesicArgs),
    /// Rank movement of matched singular vectors.
    Mobility(MobilityArgs),
    /// Singular values per step.
    Svtrace(SequenceArgs),
    /// Distances from the blended basis to both sources.
    Theorem(TheoremArgs),
}

#[derive(Args, Debug)]
pub struct SequenceArgs {
    /// Latents in sequence order.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Consecutive,
    AgainstFirst,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum SideArg {
    Left,
    Right,
}

#[derive(Args, Debug)]
pub struct GeodesicArgs {
    #[command(flatten)]
    pub seq: SequenceArgs,
    #[arg(long, default_value_t = lsvd_core::analysis::DEFAULT_SUBSPACE_DIM)]
    pub p: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Consecutive)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = SideArg::Left)]
    pub side: SideArg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MatchingArg {
    Greedy,
    Hungarian,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum TableArg {
    Ranks,
    Matches,
}

#[derive(Args, Debug)]
pub struct MobilityArgs {
    #[command(flatten)]
    pub seq: SequenceArgs,
    #[arg(long, value_enum, default_value_t = MatchingArg::Greedy)]
    pub matching: MatchingArg,
    /// CSV table to emit.
    #[arg(long, value_enum, default_value_t = TableArg::Ranks)]
    pub table: TableArg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum NormArg {
    Frobenius,
    Spectral,
}

#[derive(Args, Debug)]
pub struct TheoremArgs {
    /// Source latent; repeat together with --z for a corpus.
    #[arg(long, required = true)]
    pub x: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub z: Vec<PathBuf>,
    /// [default: N/2]
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value_t = NormArg::Frobenius)]
    pub norm: NormArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
}

fn init_threads() -> Result<(), commands::Failure> {
    let Ok(v) = std::env::var("LSVD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| commands::Failure::usage(format!("LSVD_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| commands::Failure::runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match init_threads().and_then(|()| commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
