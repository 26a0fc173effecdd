//! `fvl`: synthesize fisheye benchmarks, correct and stabilize videos,
//! analyse the dual-flow residual and score the results.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum ExitError {
    /// Invalid configuration or arguments (exit 2).
    Config(anyhow::Error),
    /// Missing, unreadable or malformed files (exit 3).
    Io(anyhow::Error),
    /// Anything else (exit 1).
    Other(anyhow::Error),
}

impl ExitError {
    fn code(&self) -> u8 {
        match self {
            ExitError::Config(_) => 2,
            ExitError::Io(_) => 3,
            ExitError::Other(_) => 1,
        }
    }

    fn inner(&self) -> &anyhow::Error {
        match self {
            ExitError::Config(e) | ExitError::Io(e) | ExitError::Other(e) => e,
        }
    }
}

impl From<fvl_core::Error> for ExitError {
    fn from(e: fvl_core::Error) -> Self {
        use fvl_core::Error as E;
        match e {
            E::Io { .. }
            | E::EmptySource(_)
            | E::BadMagic(_)
            | E::TruncatedFile(_)
            | E::DimensionOverflow { .. }
            | E::UnsupportedFormat(_)
            | E::CorruptFile { .. }
            | E::Json { .. } => ExitError::Io(e.into()),
            E::InvalidInput(_) | E::InvalidWeightRange { .. } => ExitError::Config(e.into()),
            other => ExitError::Other(other.into()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fvl", version, about = "Fisheye video synthesis, correction and stabilization")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "FVL_THREADS")]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render procedural textured pan sequences to use as source frames.
    Scene(SceneArgs),
    /// Build a fisheye dataset from planar source sequences.
    Synth(SynthArgs),
    /// Estimate per-frame lenses, correct every video and score it.
    Correct(CorrectArgs),
    /// Deformation residual of a candidate lens, with optional refinement.
    Dualflow(DualflowArgs),
    /// Dense optical flow between two frames.
    Flow(FlowArgs),
    /// Temporally blend a sequence of correction fields.
    Stabilize(StabilizeArgs),
    /// Score a corrected run against its dataset.
    Eval(EvalArgs),
    /// Run every estimator with and without stabilization.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    /// Output directory; one subdirectory per scene.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes.
    #[arg(long)]
    pub count: Option<usize>,
    /// Frames per scene.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame width and height in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Texture and heading seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory of source sequences, one subdirectory each.
    #[arg(long)]
    pub src: PathBuf,
    /// Dataset output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Lens sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of timestamps.
    #[arg(long)]
    pub count: Option<usize>,
    /// Output frame width and height in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Frames per timestamp.
    #[arg(long)]
    pub frames_per_timestamp: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Per-frame estimator: ground-truth, oracle-noisy or photometric.
    #[arg(long)]
    pub estimator: Option<String>,
    /// Noise scale on k1 for the oracle estimator.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Seed of the oracle estimator noise.
    #[arg(long)]
    pub estimator_seed: Option<u64>,
    /// Temporal window length.
    #[arg(long)]
    pub window: Option<usize>,
    /// Weight of the oldest frame in the temporal window.
    #[arg(long)]
    pub a1: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Blend correction fields over each timestamp.
    #[arg(long)]
    pub stabilize: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct DualflowArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Offset added to the ground-truth k1 to form the candidate lens.
    #[arg(long, allow_hyphen_values = true)]
    pub k1_offset: Option<f64>,
    /// Refine the candidate lens on every window.
    #[arg(long)]
    pub refine: bool,
    /// Analyse at most this many timestamps.
    #[arg(long)]
    pub max_windows: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// First frame.
    #[arg(long)]
    pub a: PathBuf,
    /// Second frame.
    #[arg(long)]
    pub b: PathBuf,
    /// Output .flo file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StabilizeArgs {
    /// Directory of .flo fields, processed in file-name order.
    #[arg(long)]
    pub fields: PathBuf,
    /// Output directory for the blended fields.
    #[arg(long)]
    pub out: PathBuf,
    /// Temporal window length.
    #[arg(long)]
    pub window: Option<usize>,
    /// Weight of the oldest frame in the temporal window.
    #[arg(long)]
    pub a1: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Run directory written by `correct`.
    #[arg(long)]
    pub run: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> Result<(), ExitError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ExitError::Config(anyhow::anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ExitError::Other(e.into()))?;
    }
    let mut cfg = config::RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Scene(a) => commands::scene(&mut cfg, &a),
        Command::Synth(a) => commands::synth(&mut cfg, &a),
        Command::Correct(a) => commands::correct(&mut cfg, &a),
        Command::Dualflow(a) => commands::dualflow(&mut cfg, &a),
        Command::Flow(a) => commands::flow(&cfg, &a),
        Command::Stabilize(a) => commands::stabilize(&mut cfg, &a),
        Command::Eval(a) => commands::eval(&cfg, &a),
        Command::Bench(a) => commands::bench(&mut cfg, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.inner());
            ExitCode::from(e.code())
        }
    }
}
