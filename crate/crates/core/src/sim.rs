//! Synthetic scenes, the Monte-Carlo coverage experiment, and synthetic
//! sequences for end-to-end runs.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`. Scene layout
//! draws from stream 0; coverage trial `i` draws from stream `i + 1`, so a
//! trial's noise depends only on the seed and its index.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::lie::{misalignment_angle, Pose, Rotation, Twist};
use crate::locator::{backward_intersection, forward_intersection, SolverConfig};
use crate::scene::{project, Frame, FrameId, Intrinsics, Observation, PointId};

pub const MAX_GENERATION_ATTEMPTS: usize = 100;
/// Half-width of the two-sided 95% normal interval.
pub const COVERAGE_Z: f64 = 1.96;

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(gaussian(rng), gaussian(rng), gaussian(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Camera at `position` with its optical axis through `target` and image
/// `y` pointing down (world `+y`).
pub fn look_at(position: Vector3<f64>, target: Vector3<f64>) -> Pose {
    let z = (target - position).normalize();
    let x = Vector3::y().cross(&z).normalize();
    let y = z.cross(&x);
    Pose::new(
        Rotation::from_matrix(Matrix3::from_columns(&[x, y, z])),
        position,
    )
}

/// Isometric label noise: i.i.d. Gaussian translation per axis and a
/// rotation about a uniformly random axis by a Gaussian angle.
pub fn perturb_pose(pose: &Pose, pos_sigma: f64, rot_sigma: f64, rng: &mut impl Rng) -> Pose {
    let dp = Vector3::new(gaussian(rng), gaussian(rng), gaussian(rng)) * pos_sigma;
    let axis = unit_vector(rng);
    let angle = gaussian(rng) * rot_sigma;
    Pose::new(
        *pose.rotation() * Rotation::exp(&(axis * angle)),
        pose.position() + dp,
    )
}

/// Layout parameters of a coverage scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub point_count: usize,
    pub camera_count: usize,
    pub focal: f64,
    pub width: f64,
    pub height: f64,
    /// Arc radius around the box centroid, meters.
    pub arc_radius: f64,
    /// Arc length between neighboring training cameras, meters.
    pub camera_spacing: f64,
    /// Probability that a visible point is missing from a track file.
    pub dropout: f64,
    pub min_visible_fraction: f64,
    /// Query camera perturbation: position sigma (m) and angle sigma (rad).
    pub query_pos_sigma: f64,
    pub query_rot_sigma: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            point_count: 119,
            camera_count: 4,
            focal: 500.0,
            width: 640.0,
            height: 480.0,
            arc_radius: 4.0,
            camera_spacing: 0.1,
            dropout: 0.1,
            min_visible_fraction: 0.6,
            query_pos_sigma: 0.02,
            query_rot_sigma: 1f64.to_radians(),
        }
    }
}

/// Box the points are drawn from: 4 m wide, 2 m tall, 2–6 m deep.
const BOX_MIN: [f64; 3] = [-2.0, -1.0, 2.0];
const BOX_MAX: [f64; 3] = [2.0, 1.0, 6.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub map_points: Vec<Vector3<f64>>,
    /// Training cameras, frame ids `0..camera_count`.
    pub training_poses: Vec<Pose>,
    /// Ground-truth query pose, frame id `camera_count`.
    pub query_pose: Pose,
    pub intrinsics: Intrinsics,
    /// Exact projections of every visible point, training frames first.
    pub observations: Vec<Observation>,
}

impl SyntheticScene {
    pub fn query_id(&self) -> FrameId {
        self.training_poses.len() as FrameId
    }

    /// Training camera closest to the query, standing in for retrieval.
    pub fn nearest_training(&self) -> usize {
        let q = self.query_pose.position();
        (0..self.training_poses.len())
            .min_by(|&a, &b| {
                let da = (self.training_poses[a].position() - q).norm();
                let db = (self.training_poses[b].position() - q).norm();
                da.total_cmp(&db)
            })
            .unwrap_or(0)
    }
}

fn visible(pose: &Pose, x: &Vector3<f64>, k: &Intrinsics) -> Option<nalgebra::Vector2<f64>> {
    project(pose, x, k).ok().filter(|px| k.contains(px))
}

pub fn generate_scene(point_count: usize, camera_count: usize, seed: u64) -> Result<SyntheticScene> {
    generate_scene_with(
        &SceneSpec {
            point_count,
            camera_count,
            ..SceneSpec::default()
        },
        seed,
    )
}

/// Cameras on a horizontal arc around the box centroid, aimed at it; the
/// query sits between them, perturbed. Points are drawn uniformly from the
/// box and redrawn until each one is seen by the query and by at least two
/// training cameras.
pub fn generate_scene_with(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    if spec.point_count < 8 {
        return Err(Error::InvalidArgument(format!(
            "point_count must be >= 8, got {}",
            spec.point_count
        )));
    }
    if spec.camera_count < 2 {
        return Err(Error::InvalidArgument(format!(
            "camera_count must be >= 2, got {}",
            spec.camera_count
        )));
    }
    let k = Intrinsics::new(spec.focal, spec.focal, spec.width / 2.0, spec.height / 2.0)?
        .with_bounds(spec.width, spec.height);
    let centroid = Vector3::new(
        (BOX_MIN[0] + BOX_MAX[0]) / 2.0,
        (BOX_MIN[1] + BOX_MAX[1]) / 2.0,
        (BOX_MIN[2] + BOX_MAX[2]) / 2.0,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);

    let step = spec.camera_spacing / spec.arc_radius;
    let on_arc = |theta: f64| {
        let pos = centroid + Vector3::new(theta.sin(), 0.0, -theta.cos()) * spec.arc_radius;
        look_at(pos, centroid)
    };
    let half = (spec.camera_count - 1) as f64 / 2.0;

    'attempt: for _ in 0..MAX_GENERATION_ATTEMPTS {
        let training_poses: Vec<Pose> = (0..spec.camera_count)
            .map(|i| on_arc((i as f64 - half) * step))
            .collect();
        let theta_q = rng.random_range(-half * step..=half * step);
        let query_pose = perturb_pose(&on_arc(theta_q), spec.query_pos_sigma, spec.query_rot_sigma, &mut rng);
        let query_id = spec.camera_count as FrameId;

        let mut map_points = Vec::with_capacity(spec.point_count);
        let mut observations = Vec::new();
        for j in 0..spec.point_count {
            let mut found = false;
            for _ in 0..1000 {
                let x = Vector3::from_fn(|i, _| rng.random_range(BOX_MIN[i]..BOX_MAX[i]));
                let mut obs = Vec::new();
                for (i, pose) in training_poses.iter().enumerate() {
                    if let Some(px) = visible(pose, &x, &k) {
                        if rng.random::<f64>() >= spec.dropout {
                            obs.push(Observation::new(i as FrameId, j as PointId, px.x, px.y));
                        }
                    }
                }
                let Some(qpx) = visible(&query_pose, &x, &k) else { continue };
                if obs.len() < 2 {
                    continue;
                }
                obs.push(Observation::new(query_id, j as PointId, qpx.x, qpx.y));
                map_points.push(x);
                observations.extend(obs);
                found = true;
                break;
            }
            if !found {
                continue 'attempt;
            }
        }
        let needed = (spec.min_visible_fraction * spec.point_count as f64).ceil() as usize;
        for frame in 0..=spec.camera_count as FrameId {
            if observations.iter().filter(|o| o.frame_id == frame).count() < needed {
                continue 'attempt;
            }
        }
        observations.sort_by_key(|o| (o.frame_id, o.point_id));
        return Ok(SyntheticScene {
            map_points,
            training_poses,
            query_pose,
            intrinsics: k,
            observations,
        });
    }
    Err(Error::GenerationFailure {
        attempts: MAX_GENERATION_ATTEMPTS,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Pixel noise standard deviation per image axis.
    pub pixel_sigma: f64,
    /// Label translation noise per axis, meters.
    pub label_pos_sigma: f64,
    /// Label rotation angle noise, radians.
    pub label_rot_sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if ok(self.pixel_sigma) && ok(self.label_pos_sigma) && ok(self.label_rot_sigma) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("noise sigmas must be finite and >= 0".into()))
        }
    }

    pub fn is_zero(&self) -> bool {
        self.pixel_sigma == 0.0 && self.label_pos_sigma == 0.0 && self.label_rot_sigma == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub position_error: Option<f64>,
    pub angle_error: Option<f64>,
    pub sigma_p: Option<f64>,
    pub sigma_r: Option<f64>,
    pub inside_positional: Option<bool>,
    pub inside_angular: Option<bool>,
    /// `eᵀC⁻¹e` for the twist error `e = log(T̄⁻¹T)`; averages 6 when the
    /// covariance is calibrated.
    pub nees: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub angular: f64,
    pub positional: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub scene: SceneSpec,
    pub noise: NoiseSpec,
    pub solver_huber_delta: f64,
    pub solver_residual_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub trials: usize,
    /// `None` when every noise sigma is zero: the estimated sigmas are then
    /// numerical floors and a coverage rate is meaningless.
    pub coverage: Option<Coverage>,
    pub zero_sigma: bool,
    pub failures: usize,
    pub mean_nees: Option<f64>,
    pub config: CoverageConfig,
    pub per_trial: Vec<TrialRecord>,
}

fn run_trial(scene: &SyntheticScene, noise: &NoiseSpec, cfg: &SolverConfig, trial: usize) -> TrialRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rng.set_stream(trial as u64 + 1);

    let observations: Vec<Observation> = scene
        .observations
        .iter()
        .map(|o| {
            let du = gaussian(&mut rng) * noise.pixel_sigma;
            let dv = gaussian(&mut rng) * noise.pixel_sigma;
            Observation::new(o.frame_id, o.point_id, o.pixel.x + du, o.pixel.y + dv)
        })
        .collect();
    let frames: Vec<Frame> = scene
        .training_poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Frame::with_pose(
                i as FrameId,
                perturb_pose(p, noise.label_pos_sigma, noise.label_rot_sigma, &mut rng),
            )
        })
        .collect();

    let query_id = scene.query_id();
    let (query_obs, train_obs): (Vec<_>, Vec<_>) =
        observations.into_iter().partition(|o| o.frame_id == query_id);
    let init = frames[scene.nearest_training()].label_pose.expect("labeled");

    let solved = forward_intersection(&frames, &train_obs, &scene.intrinsics, cfg)
        .and_then(|tri| backward_intersection(&tri.map_points, &query_obs, &scene.intrinsics, &init, cfg));
    match solved {
        Ok(g) => {
            let pose = g.estimate.pose;
            let dp = (pose.position() - scene.query_pose.position()).norm();
            let dr = misalignment_angle(pose.rotation(), scene.query_pose.rotation());
            let judged = !noise.is_zero();
            let nees = (scene.query_pose.inverse() * pose).log().ok().and_then(|e| {
                g.estimate
                    .covariance
                    .matrix()
                    .cholesky()
                    .map(|c| e.0.dot(&c.solve(&e.0)))
            });
            TrialRecord {
                trial,
                position_error: Some(dp),
                angle_error: Some(dr),
                sigma_p: Some(g.sigma_iso_p),
                sigma_r: Some(g.sigma_iso_r),
                inside_positional: judged.then_some(dp <= COVERAGE_Z * g.sigma_iso_p),
                inside_angular: judged.then_some(dr <= COVERAGE_Z * g.sigma_iso_r),
                nees: nees.filter(|_| judged),
                failure: None,
            }
        }
        Err(e) => TrialRecord {
            trial,
            position_error: None,
            angle_error: None,
            sigma_p: None,
            sigma_r: None,
            inside_positional: None,
            inside_angular: None,
            nees: None,
            failure: Some(e.to_string()),
        },
    }
}

/// Runs `trials` independent noisy solves of the same scene. Trials run in
/// parallel on the current rayon pool; the report does not depend on
/// scheduling.
pub fn run_coverage_experiment(
    scene: &SyntheticScene,
    scene_spec: &SceneSpec,
    noise: &NoiseSpec,
    solver: &SolverConfig,
    trials: usize,
) -> Result<CoverageReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    noise.validate()?;
    solver.validate()?;
    let per_trial: Vec<TrialRecord> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(scene, noise, solver, t))
        .collect();

    let failures = per_trial.iter().filter(|r| r.failure.is_some()).count();
    let solved = trials - failures;
    let zero_sigma = noise.is_zero();
    let coverage = (!zero_sigma && solved > 0).then(|| {
        let rate = |f: fn(&TrialRecord) -> Option<bool>| {
            per_trial.iter().filter(|r| f(r) == Some(true)).count() as f64 / solved as f64
        };
        Coverage {
            angular: rate(|r| r.inside_angular),
            positional: rate(|r| r.inside_positional),
        }
    });
    let nees: Vec<f64> = per_trial.iter().filter_map(|r| r.nees).collect();
    let mean_nees = (!nees.is_empty()).then(|| nees.iter().sum::<f64>() / nees.len() as f64);
    Ok(CoverageReport {
        trials,
        coverage,
        zero_sigma,
        failures,
        mean_nees,
        config: CoverageConfig {
            scene: *scene_spec,
            noise: *noise,
            solver_huber_delta: solver.huber_delta,
            solver_residual_threshold: solver.residual_threshold,
        },
        per_trial,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    ConstantVelocity,
    Piecewise,
    RandomWalk,
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant_velocity" => Ok(MotionKind::ConstantVelocity),
            "piecewise" => Ok(MotionKind::Piecewise),
            "random_walk" => Ok(MotionKind::RandomWalk),
            other => Err(Error::InvalidArgument(format!("unknown motion kind {other:?}"))),
        }
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionKind::ConstantVelocity => "constant_velocity",
            MotionKind::Piecewise => "piecewise",
            MotionKind::RandomWalk => "random_walk",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceSpec {
    /// Number of training frames.
    pub length: usize,
    pub motion: MotionKind,
    pub seed: u64,
    pub pixel_sigma: f64,
    pub descriptor_dim: usize,
}

impl SequenceSpec {
    pub fn new(length: usize, motion: MotionKind, seed: u64) -> Self {
        SequenceSpec {
            length,
            motion,
            seed,
            pixel_sigma: 0.0,
            descriptor_dim: 16,
        }
    }
}

/// A training trajectory plus a query trajectory revisiting its tail.
/// Query frame ids index the query trajectory, independent of training ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub intrinsics: Intrinsics,
    pub training: Vec<Frame>,
    pub queries: Vec<Frame>,
    pub training_tracks: Vec<Observation>,
    pub query_tracks: Vec<Observation>,
    pub points: Vec<Vector3<f64>>,
}

/// Sampling period of the synthetic camera, seconds.
pub const FRAME_PERIOD: f64 = 0.1;
const POINTS_PER_FRAME: usize = 12;
const SEQUENCE_DROPOUT: f64 = 0.1;

pub fn query_count(length: usize) -> usize {
    (length / 5).max(6)
}

/// Per-step body twists: `steps[k]` moves frame `k` to frame `k + 1`.
fn motion_steps(spec: &SequenceSpec, rng: &mut impl Rng) -> Vec<Twist> {
    let base = Twist::from_slice(&[0.05, 0.0, 0.005, 0.0, 0.004, 0.0]);
    let n = spec.length + 1;
    match spec.motion {
        MotionKind::ConstantVelocity => vec![base; n],
        MotionKind::Piecewise => {
            let mut out = Vec::with_capacity(n);
            let mut current = base;
            for k in 0..n {
                if k > 0 && k % 15 == 0 {
                    current = Twist::from_slice(&[
                        rng.random_range(0.03..0.07),
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.003..0.003),
                        rng.random_range(-0.008..0.008),
                        rng.random_range(-0.003..0.003),
                    ]);
                }
                out.push(current);
            }
            out
        }
        MotionKind::RandomWalk => (0..n)
            .map(|_| {
                let jitter: [f64; 6] = std::array::from_fn(|i| {
                    gaussian(rng) * if i < 3 { 0.005 } else { 0.002 }
                });
                Twist(base.0 + Twist::from_slice(&jitter).0)
            })
            .collect(),
    }
}

/// Pose at fractional step `s` along the piecewise-exponential path.
fn pose_at(anchors: &[Pose], steps: &[Twist], s: f64) -> Pose {
    let k = (s.floor() as usize).min(anchors.len() - 1);
    anchors[k] * Pose::exp(&steps[k].scaled(s - k as f64))
}

/// Observes every point inside each camera's image, with random dropout and
/// optional pixel noise.
fn observe(
    poses: &[Pose],
    points: &[Vector3<f64>],
    k: &Intrinsics,
    pixel_sigma: f64,
    rng: &mut impl Rng,
) -> Vec<Observation> {
    let mut out = Vec::new();
    for (i, pose) in poses.iter().enumerate() {
        for (j, x) in points.iter().enumerate() {
            let Some(px) = visible(pose, x, k) else { continue };
            if pose.inverse_transform_point(x).z < 1.0 || rng.random::<f64>() < SEQUENCE_DROPOUT {
                continue;
            }
            let du = gaussian(rng) * pixel_sigma;
            let dv = gaussian(rng) * pixel_sigma;
            out.push(Observation::new(i as FrameId, j as PointId, px.x + du, px.y + dv));
        }
    }
    out
}

/// Fixed random linear map from pose coordinates to descriptors, plus a
/// little per-frame jitter, so descriptor distance tracks pose distance.
fn descriptors(poses: &[Pose], dim: usize, rng: &mut impl Rng) -> Vec<Vec<f32>> {
    let proj: Vec<[f64; 6]> = (0..dim)
        .map(|_| std::array::from_fn(|_| gaussian(rng)))
        .collect();
    poses
        .iter()
        .map(|p| {
            let pos = p.position();
            let rot = p.rotation().log() * 2.0;
            let f = [pos.x, pos.y, pos.z, rot.x, rot.y, rot.z];
            proj.iter()
                .map(|row| {
                    let v: f64 = row.iter().zip(&f).map(|(a, b)| a * b).sum();
                    (v + 1e-3 * gaussian(rng)) as f32
                })
                .collect()
        })
        .collect()
}

/// Training frames every step; queries at half-steps over the last fifth of
/// the path, all offset by one fixed small body transform, so that under
/// constant velocity the query trajectory is itself constant velocity.
pub fn generate_sequence(spec: &SequenceSpec) -> Result<Sequence> {
    if spec.length < 10 {
        return Err(Error::InvalidArgument(format!(
            "sequence length must be >= 10, got {}",
            spec.length
        )));
    }
    if !(spec.pixel_sigma >= 0.0) || spec.descriptor_dim == 0 {
        return Err(Error::InvalidArgument("invalid sequence noise or descriptor size".into()));
    }
    let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0)?.with_bounds(640.0, 480.0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let steps = motion_steps(spec, &mut rng);
        let mut anchors = vec![Pose::identity()];
        for step in &steps[..spec.length] {
            let next = *anchors.last().expect("non-empty") * Pose::exp(step);
            anchors.push(next);
        }
        let training_poses: Vec<Pose> = anchors[..spec.length].to_vec();

        let q = query_count(spec.length);
        let offset = Pose::exp(&Twist::from_slice(&[0.0, 0.02, 0.0, 0.0, 0.0, 0.0]));
        let first = (spec.length - q) as f64;
        let query_times: Vec<f64> = (0..q).map(|j| first + j as f64 - 0.5).collect();
        let query_poses: Vec<Pose> = query_times
            .iter()
            .map(|&s| pose_at(&anchors, &steps, s) * offset)
            .collect();

        let mut points = Vec::with_capacity(POINTS_PER_FRAME * spec.length);
        for pose in &training_poses {
            for _ in 0..POINTS_PER_FRAME {
                let local = Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.2..1.2),
                    rng.random_range(3.0..6.0),
                );
                points.push(pose.transform_point(&local));
            }
        }
        let training_tracks = observe(&training_poses, &points, &k, spec.pixel_sigma, &mut rng);
        let query_tracks = observe(&query_poses, &points, &k, spec.pixel_sigma, &mut rng);
        if (0..q).any(|j| query_tracks.iter().filter(|o| o.frame_id == j as FrameId).count() < 20) {
            continue;
        }

        let all: Vec<Pose> = training_poses.iter().chain(&query_poses).copied().collect();
        let all_desc = descriptors(&all, spec.descriptor_dim, &mut rng);

        let training = training_poses
            .iter()
            .enumerate()
            .map(|(i, p)| Frame {
                id: i as FrameId,
                timestamp: Some(i as f64 * FRAME_PERIOD),
                label_pose: Some(*p),
                descriptor: Some(all_desc[i].clone()),
            })
            .collect();
        let queries = query_poses
            .iter()
            .enumerate()
            .map(|(j, p)| Frame {
                id: j as FrameId,
                timestamp: Some(query_times[j] * FRAME_PERIOD),
                label_pose: Some(*p),
                descriptor: Some(all_desc[spec.length + j].clone()),
            })
            .collect();
        return Ok(Sequence {
            intrinsics: k,
            training,
            queries,
            training_tracks,
            query_tracks,
            points,
        });
    }
    Err(Error::GenerationFailure {
        attempts: MAX_GENERATION_ATTEMPTS,
    })
}

/// File names inside a generated bundle directory.
pub mod bundle {
    pub const TRAIN_TRAJ: &str = "train_traj.txt";
    pub const QUERY_TRAJ: &str = "query_gt.txt";
    pub const TRAIN_TRACKS: &str = "train_tracks.csv";
    pub const QUERY_TRACKS: &str = "query_tracks.csv";
    pub const INTRINSICS: &str = "intrinsics.txt";
    pub const TRAIN_DESCRIPTORS: &str = "train_descriptors.bin";
    pub const QUERY_DESCRIPTORS: &str = "query_descriptors.bin";
}

pub fn write_sequence(seq: &Sequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_trajectory(dir.join(bundle::TRAIN_TRAJ), &seq.training)?;
    io::write_trajectory(dir.join(bundle::QUERY_TRAJ), &seq.queries)?;
    io::write_tracks(dir.join(bundle::TRAIN_TRACKS), &seq.training_tracks)?;
    io::write_tracks(dir.join(bundle::QUERY_TRACKS), &seq.query_tracks)?;
    io::write_intrinsics(dir.join(bundle::INTRINSICS), &seq.intrinsics)?;
    let desc = |frames: &[Frame]| -> Vec<(FrameId, Vec<f32>)> {
        frames
            .iter()
            .filter_map(|f| f.descriptor.clone().map(|d| (f.id, d)))
            .collect()
    };
    io::write_descriptors(dir.join(bundle::TRAIN_DESCRIPTORS), &desc(&seq.training))?;
    io::write_descriptors(dir.join(bundle::QUERY_DESCRIPTORS), &desc(&seq.queries))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{fit_motion_model, MotionWindow};
    use crate::scene::{PoseEstimate, Source};
    use crate::lie::Covariance6;

    #[test]
    fn default_scene_satisfies_its_invariants() {
        let scene = generate_scene(119, 4, 42).unwrap();
        assert_eq!(scene.map_points.len(), 119);
        assert_eq!(scene.training_poses.len(), 4);
        let q = scene.query_id();
        for j in 0..119 {
            let seen: Vec<_> = scene.observations.iter().filter(|o| o.point_id == j).collect();
            assert!(seen.iter().any(|o| o.frame_id == q));
            assert!(seen.iter().filter(|o| o.frame_id != q).count() >= 2);
        }
        let poses: Vec<&Pose> = scene.training_poses.iter().chain([&scene.query_pose]).collect();
        for o in &scene.observations {
            let pose = poses[o.frame_id as usize];
            let x = scene.map_points[o.point_id as usize];
            assert!(pose.inverse_transform_point(&x).z > 0.0);
            assert!((project(pose, &x, &scene.intrinsics).unwrap() - o.pixel).norm() < 1e-9);
        }
        for f in 0..=q {
            let n = scene.observations.iter().filter(|o| o.frame_id == f).count();
            assert!(n as f64 >= 0.6 * 119.0, "frame {f} sees {n}");
        }
        let gaps: Vec<f64> = scene
            .training_poses
            .windows(2)
            .map(|w| (w[0].position() - w[1].position()).norm())
            .collect();
        assert!(gaps.iter().all(|g| (g - 0.1).abs() < 1e-3));
    }

    #[test]
    fn scenes_are_deterministic() {
        assert_eq!(generate_scene(119, 4, 9).unwrap(), generate_scene(119, 4, 9).unwrap());
        assert_ne!(generate_scene(119, 4, 9).unwrap(), generate_scene(119, 4, 10).unwrap());
    }

    #[test]
    fn scene_preconditions() {
        assert!(matches!(generate_scene(119, 1, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_scene(7, 4, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_noise_trials_are_exact_and_flagged() {
        let spec = SceneSpec::default();
        let scene = generate_scene_with(&spec, 3).unwrap();
        let noise = NoiseSpec {
            pixel_sigma: 0.0,
            label_pos_sigma: 0.0,
            label_rot_sigma: 0.0,
            seed: 1,
        };
        let r = run_coverage_experiment(&scene, &spec, &noise, &SolverConfig::default(), 20).unwrap();
        assert!(r.zero_sigma);
        assert!(r.coverage.is_none());
        assert_eq!(r.failures, 0);
        for t in &r.per_trial {
            assert!(t.position_error.unwrap() < 1e-6);
            assert!(t.angle_error.unwrap() < 1e-6);
            assert_eq!(t.inside_positional, None);
        }
    }

    #[test]
    fn coverage_report_is_deterministic_and_consistent() {
        let spec = SceneSpec::default();
        let scene = generate_scene_with(&spec, 4).unwrap();
        let noise = NoiseSpec {
            pixel_sigma: 1.0,
            label_pos_sigma: 0.0,
            label_rot_sigma: 0.0,
            seed: 8,
        };
        let a = run_coverage_experiment(&scene, &spec, &noise, &SolverConfig::default(), 40).unwrap();
        let b = run_coverage_experiment(&scene, &spec, &noise, &SolverConfig::default(), 40).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = a.coverage.unwrap();
        assert!((0.0..=1.0).contains(&c.angular) && (0.0..=1.0).contains(&c.positional));
        for t in a.per_trial.iter().filter(|t| t.failure.is_none()) {
            assert_eq!(
                t.inside_positional,
                Some(t.position_error.unwrap() <= COVERAGE_Z * t.sigma_p.unwrap())
            );
        }
        assert!(run_coverage_experiment(&scene, &spec, &noise, &SolverConfig::default(), 0).is_err());
    }

    #[test]
    fn perturbation_is_isometric_in_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20000;
        let mut sq = Vector3::zeros();
        let mut angle_sq = 0.0;
        for _ in 0..n {
            let p = perturb_pose(&Pose::identity(), 0.1, 0.05, &mut rng);
            sq += p.position().component_mul(p.position());
            angle_sq += p.rotation().angle().powi(2);
        }
        for v in (sq / n as f64).iter() {
            assert!((v - 0.01).abs() < 0.0006, "{v}");
        }
        assert!((angle_sq / n as f64 - 0.0025).abs() < 0.00015);
    }

    fn fused(id: u64, pose: Pose) -> PoseEstimate {
        PoseEstimate {
            frame_id: id,
            timestamp: None,
            pose,
            covariance: Covariance6::from_diagonal(&[1e-4; 6]),
            source: Source::Fused,
        }
    }

    #[test]
    fn constant_velocity_sequences_fit_exactly() {
        let seq = generate_sequence(&SequenceSpec::new(50, MotionKind::ConstantVelocity, 3)).unwrap();
        assert_eq!(seq.training.len(), 50);
        assert_eq!(seq.queries.len(), query_count(50));
        for frames in [&seq.training, &seq.queries] {
            for start in 0..frames.len() - 4 {
                let mut w = MotionWindow::new(4).unwrap();
                for f in &frames[start..start + 4] {
                    w.push(fused(f.id, *f.pose().unwrap())).unwrap();
                }
                let m = fit_motion_model(&w).unwrap();
                assert!(m.fit_residuals.iter().all(|e| e.norm() < 1e-9));
                let next = frames[start + 4].pose().unwrap();
                assert!((m.estimate.pose.position() - next.position()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn sequences_are_deterministic_and_round_trip() {
        for motion in [MotionKind::ConstantVelocity, MotionKind::Piecewise, MotionKind::RandomWalk] {
            let spec = SequenceSpec::new(40, motion, 11);
            let seq = generate_sequence(&spec).unwrap();
            assert_eq!(seq, generate_sequence(&spec).unwrap());
            let dir = tempfile::tempdir().unwrap();
            write_sequence(&seq, dir.path()).unwrap();
            let train = io::load_trajectory(dir.path().join(bundle::TRAIN_TRAJ)).unwrap();
            let queries = io::load_trajectory(dir.path().join(bundle::QUERY_TRAJ)).unwrap();
            assert_eq!(train.len(), 40);
            assert_eq!(queries.len(), seq.queries.len());
            for (a, b) in train.iter().zip(&seq.training) {
                assert_eq!(a.id, b.id);
                assert!((a.pose().unwrap().position() - b.pose().unwrap().position()).norm() < 1e-12);
            }
            assert_eq!(io::load_tracks(dir.path().join(bundle::TRAIN_TRACKS)).unwrap(), seq.training_tracks);
            assert_eq!(io::load_tracks(dir.path().join(bundle::QUERY_TRACKS)).unwrap(), seq.query_tracks);
            assert_eq!(io::load_intrinsics(dir.path().join(bundle::INTRINSICS)).unwrap(), seq.intrinsics);
            let desc = io::read_descriptors(dir.path().join(bundle::QUERY_DESCRIPTORS)).unwrap();
            assert_eq!(desc.len(), seq.queries.len());
        }
    }

    #[test]
    fn sequence_preconditions_and_motion_names() {
        assert!(generate_sequence(&SequenceSpec::new(9, MotionKind::Piecewise, 0)).is_err());
        for m in [MotionKind::ConstantVelocity, MotionKind::Piecewise, MotionKind::RandomWalk] {
            assert_eq!(m.to_string().parse::<MotionKind>().unwrap(), m);
        }
        assert!("zigzag".parse::<MotionKind>().is_err());
    }
}
