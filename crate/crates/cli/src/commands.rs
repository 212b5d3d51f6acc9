use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

use geoloc::io;
use geoloc::keyframe::{select_keyframes, KeyframeConfig};
use geoloc::lie::misalignment_angle;
use geoloc::locator::SolverConfig;
use geoloc::pipeline::{localize_sequence, PipelineConfig, TrainingSet};
use geoloc::retrieval::{build_index, RetrievalBackend, DEFAULT_ORACLE_LAMBDA};
use geoloc::sim::{self, MotionKind, NoiseSpec, SceneSpec, SequenceSpec};
use geoloc::{Error, Frame, FrameId, Source};

use crate::args::{EvaluateArgs, GenerateArgs, LocalizeArgs, McCoverageArgs, SelectKeyframesArgs};

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Bad or missing input is a usage error (2); anything the engine fails to
/// compute is a runtime error (1).
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::NonUnitQuaternion { .. }
            | Error::DuplicateObservation { .. }
            | Error::DimensionMismatch { .. }
            | Error::EmptyInput
            | Error::MissingDescriptor { .. }
            | Error::MissingPose { .. }
            | Error::UnknownSeed { .. }
            | Error::InvalidArgument(_) => 2,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult = Result<(), CliError>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError {
        code: 1,
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

pub fn mc_coverage(args: &McCoverageArgs) -> CliResult {
    let spec = SceneSpec {
        point_count: args.points,
        camera_count: args.cameras,
        ..SceneSpec::default()
    };
    let noise = NoiseSpec {
        pixel_sigma: args.pixel_sigma,
        label_pos_sigma: args.label_noise_pos,
        label_rot_sigma: args.label_noise_rot.to_radians(),
        seed: args.seed,
    };
    noise.validate()?;
    let scene = sim::generate_scene_with(&spec, args.seed)?;
    let report = sim::run_coverage_experiment(
        &scene,
        &spec,
        &noise,
        &SolverConfig::default(),
        args.trials as usize,
    )?;
    match report.coverage {
        Some(c) => {
            println!("angular coverage: {:.1}%", 100.0 * c.angular);
            println!("positional coverage: {:.1}%", 100.0 * c.positional);
        }
        None => println!("coverage undefined: every noise sigma is zero"),
    }
    println!("failures: {} of {}", report.failures, report.trials);
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

/// Overrides read from a `key: value` config file.
#[derive(Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub entries: Vec<(String, String)>,
}

pub const CONFIG_KEYS: &[&str] = &[
    "window",
    "bootstrap",
    "huber_delta",
    "residual_threshold",
    "max_iterations",
    "group_size",
    "d_m",
    "ell",
    "alpha_m",
    "delta_k",
    "oracle_lambda",
];

pub fn parse_config(text: &str, path: &Path) -> Result<ConfigFile, CliError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| {
            CliError::usage(format!("{}:{}: expected `key: value`", path.display(), i + 1))
        })?;
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(CliError::usage(format!(
                "{}:{}: unknown key {key:?}",
                path.display(),
                i + 1
            )));
        }
        entries.push((key.to_string(), value.trim().to_string()));
    }
    Ok(ConfigFile { entries })
}

impl ConfigFile {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.entries.iter().rev().find(|(k, _)| k == key) {
            None => Ok(None),
            Some((_, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::usage(format!("config key {key}: bad value {v:?}"))),
        }
    }
}

fn pick<T: std::str::FromStr + Copy>(
    flag: Option<T>,
    file: &ConfigFile,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    Ok(match flag {
        Some(v) => v,
        None => file.get(key)?.unwrap_or(default),
    })
}

pub fn pipeline_config(args: &LocalizeArgs, file: &ConfigFile) -> Result<(PipelineConfig, f64), CliError> {
    let d = PipelineConfig::default();
    let cfg = PipelineConfig {
        keyframe: KeyframeConfig {
            d_m: pick(args.d_m, file, "d_m", d.keyframe.d_m)?,
            ell: pick(args.ell, file, "ell", d.keyframe.ell)?,
            alpha_m: pick(args.alpha_m, file, "alpha_m", d.keyframe.alpha_m.to_degrees())?.to_radians(),
            delta_k: pick(args.delta_k, file, "delta_k", d.keyframe.delta_k)?,
            group_size: pick(args.group_size, file, "group_size", d.keyframe.group_size)?,
        },
        solver: SolverConfig {
            huber_delta: pick(args.huber_delta, file, "huber_delta", d.solver.huber_delta)?,
            residual_threshold: pick(
                args.residual_threshold,
                file,
                "residual_threshold",
                d.solver.residual_threshold,
            )?,
            max_iterations: pick(args.max_iterations, file, "max_iterations", d.solver.max_iterations)?,
            ..d.solver
        },
        motion_window: pick(args.window, file, "window", d.motion_window)?,
        bootstrap_frames: pick(args.bootstrap, file, "bootstrap", d.bootstrap_frames)?,
    };
    cfg.validate()?;
    let lambda = pick(args.oracle_lambda, file, "oracle_lambda", DEFAULT_ORACLE_LAMBDA)?;
    Ok((cfg, lambda))
}

fn query_frames(args: &LocalizeArgs, descriptors: Option<&[(FrameId, Vec<f32>)]>) -> Result<Vec<Frame>, CliError> {
    let mut frames = match &args.query_traj {
        Some(path) => io::load_trajectory(path)?,
        None => {
            let ids: BTreeSet<FrameId> = match descriptors {
                Some(d) => d.iter().map(|(id, _)| *id).collect(),
                None => io::load_tracks(&args.query_tracks)?
                    .iter()
                    .map(|o| o.frame_id)
                    .collect(),
            };
            ids.into_iter()
                .map(|id| Frame {
                    timestamp: Some(id as f64),
                    ..Frame::new(id)
                })
                .collect()
        }
    };
    if let Some(d) = descriptors {
        for f in &mut frames {
            f.descriptor = d.iter().find(|(id, _)| *id == f.id).map(|(_, v)| v.clone());
        }
    }
    if args.oracle {
        for f in &frames {
            f.pose()?;
        }
    }
    Ok(frames)
}

pub fn localize(args: &LocalizeArgs) -> CliResult {
    let file = match &args.config {
        Some(p) => parse_config(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?, p)?,
        None => ConfigFile::default(),
    };
    let (cfg, lambda) = pipeline_config(args, &file)?;

    let intrinsics = io::load_intrinsics(&args.intrinsics)?;
    let mut training = io::load_trajectory(&args.train_traj)?;
    let tracks = io::load_tracks(&args.tracks)?;
    let query_tracks = io::load_tracks(&args.query_tracks)?;

    let (backend, query_desc) = if args.oracle {
        if args.query_traj.is_none() {
            let first = query_tracks.iter().map(|o| o.frame_id).min().unwrap_or(0);
            return Err(Error::MissingPose { frame_id: first }.into());
        }
        (RetrievalBackend::pose_oracle(&training, lambda)?, None)
    } else {
        let train_path = args.descriptors.as_ref().ok_or_else(|| CliError::usage("--descriptors is required"))?;
        let query_path = args
            .query_descriptors
            .as_ref()
            .ok_or_else(|| CliError::usage("--query-descriptors is required"))?;
        let train_desc = io::read_descriptors(train_path)?;
        for f in &mut training {
            f.descriptor = train_desc.iter().find(|(id, _)| *id == f.id).map(|(_, v)| v.clone());
            if f.descriptor.is_none() {
                return Err(Error::MissingDescriptor { frame_id: f.id }.into());
            }
        }
        (
            RetrievalBackend::Descriptor(build_index(train_desc)?),
            Some(io::read_descriptors(query_path)?),
        )
    };
    let queries = query_frames(args, query_desc.as_deref())?;
    let set = TrainingSet::new(training, &tracks, intrinsics, backend)?;
    let outputs = localize_sequence(&set, &queries, &query_tracks, &cfg)?;

    let estimates: Vec<_> = outputs.iter().map(|o| o.estimate.clone()).collect();
    io::save_estimates(&args.out, &estimates)?;
    let count = |s: Source| outputs.iter().filter(|o| o.estimate.source == s).count();
    println!(
        "localized {} frames: {} geometric, {} fused, {} motion ({} gated, {} degraded)",
        outputs.len(),
        count(Source::Geometric),
        count(Source::Fused),
        count(Source::Motion),
        outputs.iter().filter(|o| o.gate_fired).count(),
        outputs.iter().filter(|o| o.degraded).count(),
    );
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct FrameError {
    pub frame_id: FrameId,
    pub timestamp: f64,
    pub position_error_m: f64,
    pub angle_error_deg: f64,
}

#[derive(Debug, Serialize)]
pub struct Evaluation {
    pub frames: usize,
    pub median_position_error_m: f64,
    pub median_angle_error_deg: f64,
    pub per_frame: Vec<FrameError>,
}

/// Middle value; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Timestamps of matched frames may differ by at most this much, seconds.
pub const TIMESTAMP_TOLERANCE: f64 = 1e-6;

pub fn evaluate_frames(pred: &[Frame], gt: &[Frame]) -> Result<Evaluation, CliError> {
    if pred.len() != gt.len() {
        return Err(CliError::usage(format!(
            "frame count mismatch: {} predicted, {} ground truth",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(CliError::usage("no frames to evaluate"));
    }
    let mut per_frame = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gt) {
        let (tp, tg) = (p.timestamp.unwrap_or(p.id as f64), g.timestamp.unwrap_or(g.id as f64));
        if p.id != g.id || (tp - tg).abs() > TIMESTAMP_TOLERANCE {
            return Err(CliError::usage(format!(
                "frame {} at t={tp} has no ground-truth match (t={tg})",
                p.id
            )));
        }
        let (pp, gp) = (p.pose()?, g.pose()?);
        per_frame.push(FrameError {
            frame_id: p.id,
            timestamp: tp,
            position_error_m: (pp.position() - gp.position()).norm(),
            angle_error_deg: misalignment_angle(pp.rotation(), gp.rotation()).to_degrees(),
        });
    }
    let pos: Vec<f64> = per_frame.iter().map(|f| f.position_error_m).collect();
    let ang: Vec<f64> = per_frame.iter().map(|f| f.angle_error_deg).collect();
    Ok(Evaluation {
        frames: per_frame.len(),
        median_position_error_m: median(&pos),
        median_angle_error_deg: median(&ang),
        per_frame,
    })
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult {
    let pred = io::load_trajectory(&args.pred)?;
    let gt = io::load_trajectory(&args.gt)?;
    let eval = evaluate_frames(&pred, &gt)?;
    println!(
        "{:.3}m, {:.3}°",
        eval.median_position_error_m, eval.median_angle_error_deg
    );
    if let Some(out) = &args.out {
        write_json(out, &eval)?;
    }
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> CliResult {
    let motion: MotionKind = args.motion.parse()?;
    let spec = SequenceSpec {
        pixel_sigma: args.pixel_sigma,
        ..SequenceSpec::new(args.length, motion, args.seed)
    };
    let seq = sim::generate_sequence(&spec)?;
    sim::write_sequence(&seq, &args.out_dir)?;
    println!(
        "wrote {} training frames and {} queries to {}",
        seq.training.len(),
        seq.queries.len(),
        args.out_dir.display()
    );
    Ok(())
}

pub fn select(args: &SelectKeyframesArgs) -> CliResult {
    let frames = io::load_trajectory(&args.train_traj)?;
    let cfg = KeyframeConfig {
        d_m: args.d_m,
        ell: args.ell,
        alpha_m: args.alpha_m.to_radians(),
        delta_k: args.delta_k,
        group_size: args.group_size,
    };
    let ids = select_keyframes(&frames, args.seed_frame, &cfg)?;
    let text: Vec<String> = ids.iter().map(u64::to_string).collect();
    println!("{}", text.join(" "));
    Ok(())
}
