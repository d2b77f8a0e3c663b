//! Command-line front end: `synth | retrieve | pose2v | pose-mv | eval`.
//!
//! Every command writes one JSON report (stdout unless `--report` is given)
//! whose only run-dependent field is `timing_ms`. Exit codes: 0 success,
//! 1 pipeline failure, 2 usage or validation error. `POSEKIT_THREADS` caps the
//! worker pool (0 or unset: one per core).

mod commands;
pub mod reports;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::evalharness::EvalError;
use crate::geometry::GeometryError;
use crate::multiview::MultiviewError;
use crate::retrieval::{RetrievalError, DEFAULT_SIGMA, DEFAULT_TOP_K};
use crate::tensorio::ManifestError;

pub const THREADS_ENV: &str = "POSEKIT_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Pipeline(_) => 1,
        }
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::UnknownPrompt(id) => CliError::Usage(format!("unknown prompt {id}")),
            e => CliError::Usage(e.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::InvalidConfig(_) | GeometryError::InvalidIntrinsics(_) => CliError::Usage(e.to_string()),
            e => CliError::Pipeline(e.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            e => CliError::Pipeline(e.to_string()),
        }
    }
}

impl From<MultiviewError> for CliError {
    fn from(e: MultiviewError) -> Self {
        match e {
            MultiviewError::InvalidConfig(_) | MultiviewError::TooFewViews(_) | MultiviewError::UnknownView(_) => {
                CliError::Usage(e.to_string())
            }
            MultiviewError::Geometry(g) => g.into(),
            e => CliError::Pipeline(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidConfig(_) | EvalError::InvalidInput(_) | EvalError::Empty(_) => {
                CliError::Usage(e.to_string())
            }
            EvalError::Manifest(m) => m.into(),
            e => CliError::Pipeline(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "posekit",
    version,
    about = "Object retrieval, relative pose and multi-view registration on match files"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene as a manifest bundle.
    Synth(SynthArgs),
    /// Retrieve the proposal matching a prompt.
    Retrieve(RetrieveArgs),
    /// Estimate relative poses of view pairs.
    #[command(name = "pose2v")]
    Pose2v(Pose2vArgs),
    /// Register all views into one map and refine it.
    #[command(name = "pose-mv")]
    PoseMv(PoseMvArgs),
    /// Aggregate metrics over reports.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for the manifest and tensors.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_px: f64,
    #[arg(long, default_value_t = 0.0)]
    pub outlier_ratio: f64,
    #[arg(long, default_value_t = 2)]
    pub views: usize,
    #[arg(long, default_value_t = 30.0)]
    pub rotation_range_deg: f64,
    #[arg(long, default_value_t = 4.0)]
    pub depth_min: f64,
    #[arg(long, default_value_t = 8.0)]
    pub depth_max: f64,
    /// Focal length in pixels; the principal point is the image center.
    #[arg(long, default_value_t = 800.0)]
    pub focal: f64,
    #[arg(long, default_value_t = 640)]
    pub width: u32,
    #[arg(long, default_value_t = 480)]
    pub height: u32,
    #[arg(long, default_value_t = 3)]
    pub proposals: usize,
    #[arg(long, default_value_t = 32)]
    pub embedding_dim: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub prompt: String,
    /// View holding the proposals; defaults to the only candidate view.
    #[arg(long)]
    pub view: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    pub sigma: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct Pose2vArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// View pair `A,B`; all view-pair matchsets when omitted.
    #[arg(long, value_parser = parse_pair)]
    pub pair: Option<(String, String)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampson-distance inlier threshold in normalized image units.
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    #[arg(long, default_value_t = 2048)]
    pub max_iterations: usize,
    /// Write an SVG overlay (requires a single pair).
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Recover metric scale from this prompt's box in the support view.
    #[arg(long)]
    pub scale_prompt: Option<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PoseMvArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Use only the first `n` views of the manifest.
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Two-view inlier threshold, normalized units.
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    /// PnP reprojection threshold, normalized units.
    #[arg(long, default_value_t = 5e-3)]
    pub pnp_threshold: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reports written by `retrieve`, `pose2v` or `pose-mv`.
    pub reports: Vec<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once(',') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() && !b.contains(',') => Ok((a.to_string(), b.to_string())),
        _ => Err(format!("expected `VIEW_A,VIEW_B`, got `{s}`")),
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got `{raw}`")))?;
    if n > 0 {
        // Fails only if a pool already exists (repeated in-process runs); keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Retrieve(a) => commands::retrieve(&a),
        Command::Pose2v(a) => commands::pose2v(&a),
        Command::PoseMv(a) => commands::pose_mv(&a),
        Command::Eval(a) => commands::eval(&a),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors are printed to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("posekit: {e}");
            e.exit_code()
        }
    }
}
