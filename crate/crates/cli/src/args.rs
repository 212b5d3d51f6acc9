use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "geoloc", version, about = "Monocular image localization with calibrated pose uncertainty")]
pub struct Cli {
    /// Worker threads for parallel stages; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo coverage of the geometric locator's covariance.
    McCoverage(McCoverageArgs),
    /// Localize a query sequence against pose-labeled training frames.
    Localize(LocalizeArgs),
    /// Median position and angle error of a predicted trajectory.
    Evaluate(EvaluateArgs),
    /// Write a synthetic sequence bundle.
    Generate(GenerateArgs),
    /// Print the keyframes selected around one training frame.
    SelectKeyframes(SelectKeyframesArgs),
}

#[derive(Debug, Args)]
pub struct McCoverageArgs {
    /// Number of Monte-Carlo trials.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    /// Pixel noise standard deviation per image axis.
    #[arg(long, default_value_t = 1.0)]
    pub pixel_sigma: f64,
    /// Pose-label translation noise per axis, meters.
    #[arg(long, default_value_t = 0.0)]
    pub label_noise_pos: f64,
    /// Pose-label rotation noise, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub label_noise_rot: f64,
    /// Number of 3D points in the scene.
    #[arg(long, default_value_t = 119)]
    pub points: usize,
    /// Number of training cameras.
    #[arg(long, default_value_t = 4)]
    pub cameras: usize,
    /// Seed for the scene and every trial.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// JSON report path. If omitted, only the summary is printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// Training trajectory (timestamp tx ty tz qx qy qz qw per line).
    #[arg(long)]
    pub train_traj: PathBuf,
    /// Training track CSV (frame_id,point_id,u,v).
    #[arg(long)]
    pub tracks: PathBuf,
    /// Query track CSV; frame ids index the query sequence.
    #[arg(long)]
    pub query_tracks: PathBuf,
    /// Intrinsics file (fx, fy, cx, cy as key: value lines).
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Training descriptor file. Required unless --oracle is set.
    #[arg(long, required_unless_present = "oracle")]
    pub descriptors: Option<PathBuf>,
    /// Query descriptor file. Required unless --oracle is set.
    #[arg(long, required_unless_present = "oracle")]
    pub query_descriptors: Option<PathBuf>,
    /// Retrieve by ground-truth pose distance instead of descriptors; needs --query-traj.
    #[arg(long, conflicts_with_all = ["descriptors", "query_descriptors"])]
    pub oracle: bool,
    /// Query trajectory. Supplies timestamps and, for --oracle, poses. If omitted, query
    /// ids come from the query descriptors (or tracks) and timestamps equal ids.
    #[arg(long)]
    pub query_traj: Option<PathBuf>,
    /// Output trajectory; the covariance sidecar is written next to it with a .json extension.
    #[arg(long)]
    pub out: PathBuf,
    /// Config file of key: value lines; flags given on the command line override it.
    /// If omitted, built-in defaults apply.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Motion-model window length [default: 4].
    #[arg(long)]
    pub window: Option<usize>,
    /// Leading queries that use the geometric estimate alone [default: 4].
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Huber threshold, pixels [default: 1.0].
    #[arg(long)]
    pub huber_delta: Option<f64>,
    /// Mean reprojection error above which a triangulated point is dropped, pixels [default: 5.0].
    #[arg(long)]
    pub residual_threshold: Option<f64>,
    /// Solver iteration cap [default: 50].
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Keyframes per group including the retrieved frame; odd [default: 7].
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Preferred keyframe baseline, meters [default: 0.1].
    #[arg(long)]
    pub d_m: Option<f64>,
    /// Keyframe baseline tolerance, meters [default: 0.2].
    #[arg(long)]
    pub ell: Option<f64>,
    /// Keyframe angular threshold, degrees [default: 3].
    #[arg(long)]
    pub alpha_m: Option<f64>,
    /// Keyframe search range, frames [default: 100].
    #[arg(long)]
    pub delta_k: Option<usize>,
    /// Meters per radian in the oracle's pose distance [default: 1.0].
    #[arg(long)]
    pub oracle_lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted trajectory.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth trajectory with the same frames.
    #[arg(long)]
    pub gt: PathBuf,
    /// JSON output path. If omitted, only the summary is printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of training frames.
    #[arg(long, default_value_t = 100)]
    pub length: usize,
    /// Camera motion: constant_velocity, piecewise or random_walk.
    #[arg(long, default_value = "constant_velocity")]
    pub motion: String,
    /// Random seed.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Pixel noise standard deviation added to every track.
    #[arg(long, default_value_t = 0.0)]
    pub pixel_sigma: f64,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectKeyframesArgs {
    /// Training trajectory.
    #[arg(long)]
    pub train_traj: PathBuf,
    /// Training frame id to grow the group from.
    #[arg(long)]
    pub seed_frame: u64,
    /// Keyframes per group including the seed; odd.
    #[arg(long, default_value_t = 7)]
    pub group_size: usize,
    /// Preferred baseline, meters.
    #[arg(long, default_value_t = 0.1)]
    pub d_m: f64,
    /// Baseline tolerance, meters.
    #[arg(long, default_value_t = 0.2)]
    pub ell: f64,
    /// Angular threshold, degrees.
    #[arg(long, default_value_t = 3.0)]
    pub alpha_m: f64,
    /// Search range, frames.
    #[arg(long, default_value_t = 100)]
    pub delta_k: usize,
}
