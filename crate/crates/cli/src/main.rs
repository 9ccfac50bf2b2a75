//! `rtfkit` command line: dataset generation, fitting and evaluation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use rtfkit::Error;

#[derive(Parser, Debug)]
#[command(name = "rtfkit", version, about = "Fit and evaluate polynomial ray-transfer camera models")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GlobalArgs {
    /// Seed for every random choice made by the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving all output files.
    #[arg(long, short = 'o', global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Increase log verbosity (repeatable).
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Trace a lens and write a ray dataset.
    Dataset(DatasetArgs),
    /// Fit an RTF camera model to a dataset.
    Fit(FitArgs),
    /// Evaluate models against the traced lens.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Re-run the command recorded in an emitted config file.
    #[serde(skip)]
    Rerun { config: PathBuf },
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct LensArgs {
    /// Lens prescription JSON, object side first.
    #[arg(long)]
    pub lens: PathBuf,
    /// The file is already given sensor side first.
    #[arg(long)]
    pub no_reverse: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DatasetArgs {
    #[command(flatten)]
    pub lens: LensArgs,
    #[command(flatten)]
    pub planes: PlaneArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "dataset.txt")]
    pub output: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PlaneArgs {
    /// Input plane distance from the sensor-side vertex (mm).
    #[arg(long, default_value_t = 0.01)]
    pub offset_input: f64,
    /// Output plane distance past the object-side vertex (mm).
    #[arg(long, default_value_t = 0.01)]
    pub offset_output: f64,
    /// Ray-pass plane distance from the input plane (mm); defaults to the
    /// paraxial pupil.
    #[arg(long)]
    pub raypass_offset: Option<f64>,
    /// Spherical output surface as `CENTER_Z,RADIUS` (mm) instead of a plane.
    #[arg(long, value_parser = parse_pair)]
    pub sphere_output: Option<(f64, f64)>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SamplingArgs {
    /// Largest input-plane field height (mm).
    #[arg(long, default_value_t = 1.0)]
    pub ymax: f64,
    /// Number of field heights from 0 to ymax.
    #[arg(long, default_value_t = 20)]
    pub nfield: usize,
    #[arg(long, default_value_t = 32)]
    pub nradial: usize,
    #[arg(long, default_value_t = 32)]
    pub nangular: usize,
    /// Pupil disc enlargement factor.
    #[arg(long, default_value_t = 1.2)]
    pub margin: f64,
    #[arg(long)]
    pub jitter: bool,
    /// Shift of the field and pupil grids, in grid steps.
    #[arg(long, default_value_t = 0.0)]
    pub grid_offset: f64,
    /// Aim at a pupil `Z,RADIUS` (mm) instead of the paraxial one.
    #[arg(long, value_parser = parse_pair)]
    pub pupil: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RayPassArg {
    Ellipse,
    Circles,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FitArgs {
    /// Dataset file written by `rtfkit dataset`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub degree: usize,
    #[arg(long, value_enum, default_value_t = RayPassArg::Ellipse)]
    pub raypass: RayPassArg,
    /// Field heights (mm) where a new circle takes over; proposed
    /// automatically when omitted.
    #[arg(long, value_delimiter = ',')]
    pub breakpoints: Option<Vec<f64>>,
    /// Most circles considered when proposing breakpoints.
    #[arg(long, default_value_t = 4)]
    pub max_circles: usize,
    /// Film distance (mm); defaults to infinity focus.
    #[arg(long)]
    pub film_distance: Option<f64>,
    #[arg(long, default_value = "rtf")]
    pub name: String,
    #[arg(long, default_value = "model.json")]
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Random,
    Grid,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SampleArgs {
    /// Rays per sensor position.
    #[arg(long, default_value_t = 4096)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Random)]
    pub mode: ModeArg,
    /// Enlargement of the sampled pupil disc.
    #[arg(long, default_value_t = 1.2)]
    pub disc_margin: f64,
    /// Also write an SVG plot next to the CSV.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct OracleArgs {
    /// Lens prescription to trace as ground truth.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long)]
    pub no_reverse: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EsfArgs {
    /// `auto` or two comma-separated object distances from the front
    /// vertex (mm).
    #[arg(long, default_value = "auto")]
    pub distances: String,
    #[arg(long, default_value_t = 201)]
    pub pixels: usize,
    /// Pixel pitch (µm).
    #[arg(long, default_value_t = 1.0)]
    pub pitch: f64,
    /// Edge position on the object plane (mm).
    #[arg(long, default_value_t = 0.0)]
    pub edge_x: f64,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCommand {
    /// Relative illumination across the field.
    Ri {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        oracle: OracleArgs,
        /// Number of sensor heights from 0 to hmax.
        #[arg(long, default_value_t = 15)]
        heights: usize,
        /// Largest sensor height (mm); defaults to the model's field limit.
        #[arg(long)]
        hmax: Option<f64>,
        #[command(flatten)]
        sampling: SampleArgs,
    },
    /// Edge-spread functions at two object distances.
    Esf {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        oracle: OracleArgs,
        #[command(flatten)]
        esf: EsfArgs,
        #[command(flatten)]
        sampling: SampleArgs,
    },
    /// ESF RMSE against the traced lens for a range of fit degrees.
    Sweep {
        #[command(flatten)]
        lens: LensArgs,
        #[command(flatten)]
        planes: PlaneArgs,
        #[command(flatten)]
        dataset: SamplingArgs,
        /// Degrees as `LO:HI` or a comma-separated list.
        #[arg(long, default_value = "1:9")]
        degrees: String,
        #[arg(long, value_enum, default_value_t = RayPassArg::Ellipse)]
        raypass: RayPassArg,
        #[arg(long, value_delimiter = ',')]
        breakpoints: Option<Vec<f64>>,
        #[command(flatten)]
        esf: EsfArgs,
        #[command(flatten)]
        sampling: SampleArgs,
    },
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub tool_version: String,
    pub global: GlobalArgs,
    pub command: Command,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two comma-separated numbers, got {s:?}"))?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("not a number: {t:?}"));
    Ok((p(a)?, p(b)?))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::Lens(_)
        | Error::Config(_)
        | Error::Parse { .. }
        | Error::Schema { .. }
        | Error::Version { .. }
        | Error::Domain(_) => 2,
        Error::Underdetermined { .. } | Error::FitFailed(_) | Error::Degenerate(_) | Error::DegenerateImaging => 3,
        Error::Evaluation(_) => 4,
    }
}

fn init_threads() -> rtfkit::Result<()> {
    let Ok(v) = std::env::var("RTFKIT_THREADS") else { return Ok(()) };
    let n: usize =
        v.trim().parse().map_err(|_| Error::Config(format!("RTFKIT_THREADS: expected a count, got {v:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("RTFKIT_THREADS: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = std::panic::catch_unwind(|| init_threads().and_then(|_| commands::run(cli.global, cli.command)));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(5),
    }
}
