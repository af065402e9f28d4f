//! The `sparsevox` command line: voxelize recordings, run inference, score
//! and diagnose detections, and run the built-in verification routines.

pub mod commands;
pub mod config;
pub mod demo;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparsevox::forensics::ReportFormat;

use crate::error::{CliError, CliResult, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "sparsevox", version, about = "Fully sparse event-camera object detection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON file overriding voxelizer, inference, forensics and loss settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads for frame-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Print per-stage active-voxel counts to stderr.
    #[arg(long, global = true)]
    pub trace: bool,
    /// Output format of human-facing reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Detection score threshold, overriding the config file.
    #[arg(long, global = true)]
    pub score_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Markdown,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Markdown => ReportFormat::Markdown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelSize {
    Full,
    Tiny,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Slice a recording into windows and write one SVX1 container per window.
    Voxelize(VoxelizeArgs),
    /// Run a checkpoint over containers and write detections JSON-lines.
    Infer(InferArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// False-negative / false-positive breakdown of a detection run.
    Forensics(ForensicsArgs),
    /// Compare sparse convolutions against the dense reference.
    OracleCheck(OracleArgs),
    /// Voxel counts and memory estimates of one event set on several grids.
    Bench(BenchArgs),
    /// Fit the detection head on a fixed synthetic frame and emit the loss trace.
    DemoFit(DemoArgs),
    /// Render a synthetic scene to events and ground truth.
    Synth(SynthArgs),
    /// Write a randomly initialised checkpoint.
    InitCheckpoint(InitArgs),
}

#[derive(Debug, Clone, Args)]
pub struct VoxelizeArgs {
    /// Events file (EVT1 binary or `t,x,y,p` CSV).
    pub events: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sensor resolution `WxH`.
    #[arg(long, default_value = "1280x720")]
    pub sensor: String,
    /// Directory of YOLO label files `frame_NNNNNN.txt`, one per window.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Feature encoder by name; defaults to the one matching the configured channels.
    #[arg(long)]
    pub encoder: Option<String>,
    /// Augmentation applied to every window, e.g. `hflip` or `dropout:0.1`; repeatable.
    #[arg(long = "augment")]
    pub augment: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    /// A container file or a directory of `.svx` containers.
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Metrics JSON destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ForensicsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Writes `report.json` and `report.md` here; otherwise prints in `--format`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    /// Random instances per convolution mode.
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
    /// Constant added to every sparse-side weight.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub perturb: f32,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Convolution mode by registered name; repeatable, all modes when omitted.
    #[arg(long = "mode")]
    pub modes: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Comma-separated grid sizes `WxH`.
    #[arg(long, default_value = "640x640,1280x720")]
    pub grids: String,
    /// Comma-separated target event counts.
    #[arg(long, default_value = "20000")]
    pub events: String,
    /// Add a wall-clock column (makes the output non-deterministic).
    #[arg(long)]
    pub timing: bool,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = demo::DEMO_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = demo::DEMO_LR)]
    pub lr: f64,
    /// Loss-trace CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit with status 1 unless final/initial loss is below this.
    #[arg(long)]
    pub max_ratio: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Scene description JSON.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write `events.csv` instead of `events.bin`.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub in_channels: usize,
    #[arg(long, value_enum, default_value_t = ModelSize::Full)]
    pub size: ModelSize,
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPARSEVOX_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    if g.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let mut cfg = config::RunConfig::load(g.config.as_deref())?;
    if let Some(t) = g.score_threshold {
        cfg.inference.score_threshold = t;
        cfg.inference.validate()?;
    }
    match &cli.command {
        Command::Voxelize(a) => commands::voxelize(a, g, &cfg),
        Command::Infer(a) => commands::infer(a, g, &cfg),
        Command::Eval(a) => commands::eval(a, g),
        Command::Forensics(a) => commands::forensics(a, g, &cfg),
        Command::OracleCheck(a) => commands::oracle_check(a, g),
        Command::Bench(a) => commands::bench(a, g, &cfg),
        Command::DemoFit(a) => commands::demo_fit(a, g, &cfg),
        Command::Synth(a) => commands::synth(a),
        Command::InitCheckpoint(a) => commands::init_checkpoint(a, g),
    }
}
