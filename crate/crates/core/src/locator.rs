//! Single-image geometric locator.
//!
//! Forward intersection triangulates map points from pose-labeled training
//! frames with those poses held fixed. Backward intersection then estimates
//! the query camera pose from the triangulated points and derives its
//! covariance from the residual-scaled information matrix.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Matrix2, Matrix2x6, Matrix6, SMatrix, SVector, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::lie::{Covariance6, Pose, Twist};
use crate::robust::{self, Huber, LmSettings, ReprojectionProblem};
use crate::scene::{
    project, right_jacobian_residual, Frame, FrameId, Intrinsics, MapPoint, Observation,
    PointId, PoseEstimate, Source, MIN_DEPTH,
};

/// Floor on the estimated residual variance (px²), so exact data still
/// yields an invertible information matrix.
pub const MIN_RESIDUAL_VARIANCE: f64 = 1e-12;
/// Largest accepted condition number of the pose information matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// Rays closer than this to parallel cannot be intersected.
pub const MIN_RAY_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Huber threshold, pixels.
    pub huber_delta: f64,
    pub max_iterations: usize,
    pub step_tolerance: f64,
    /// Points whose mean reprojection error exceeds this (pixels) are dropped.
    pub residual_threshold: f64,
    pub min_observations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            huber_delta: 1.0,
            max_iterations: 50,
            step_tolerance: 1e-9,
            residual_threshold: 5.0,
            min_observations: 4,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.huber_delta > 0.0
            && self.max_iterations > 0
            && self.step_tolerance > 0.0
            && self.residual_threshold > 0.0
            && self.min_observations > 0
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument("solver parameters must be positive".into()))
        }
    }

    fn lm(&self) -> LmSettings {
        LmSettings {
            huber: Huber::new(self.huber_delta),
            max_iterations: self.max_iterations,
            step_tolerance: self.step_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangulationResult {
    pub map_points: Vec<MapPoint>,
    pub rejected_point_ids: Vec<PointId>,
    /// Mean over surviving points of their mean residual, pixels.
    pub mean_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricEstimate {
    pub estimate: PoseEstimate,
    /// `‖r‖²`: sum of squared reprojection residuals at the solution, px².
    pub residual_sum: f64,
    pub track_count: usize,
    pub sigma_iso_p: f64,
    pub sigma_iso_r: f64,
    pub iterations: usize,
    /// Robust objective after each accepted step.
    pub cost_history: Vec<f64>,
}

struct PointProblem<'a> {
    views: Vec<(&'a Pose, Vector2<f64>)>,
    k: &'a Intrinsics,
}

impl ReprojectionProblem<3> for PointProblem<'_> {
    type State = Vector3<f64>;

    fn residuals(&self, x: &Vector3<f64>) -> Option<Vec<Vector2<f64>>> {
        self.views
            .iter()
            .map(|(t, obs)| project(t, x, self.k).ok().map(|p| p - obs))
            .collect()
    }

    fn jacobians(&self, x: &Vector3<f64>) -> Vec<SMatrix<f64, 2, 3>> {
        self.views
            .iter()
            .map(|(t, _)| {
                let xc = t.inverse_transform_point(x);
                self.k.projection_jacobian(&xc) * t.rotation().matrix().transpose()
            })
            .collect()
    }

    fn retract(&self, x: &Vector3<f64>, d: &SVector<f64, 3>) -> Vector3<f64> {
        x + d
    }
}

struct PoseProblem<'a> {
    points: Vec<(Vector3<f64>, Vector2<f64>)>,
    k: &'a Intrinsics,
}

impl ReprojectionProblem<6> for PoseProblem<'_> {
    type State = Pose;

    fn residuals(&self, t: &Pose) -> Option<Vec<Vector2<f64>>> {
        self.points
            .iter()
            .map(|(x, obs)| project(t, x, self.k).ok().map(|p| p - obs))
            .collect()
    }

    fn jacobians(&self, t: &Pose) -> Vec<Matrix2x6<f64>> {
        self.points
            .iter()
            .map(|(x, _)| right_jacobian_residual(t, x, self.k).unwrap_or_else(|_| Matrix2x6::zeros()))
            .collect()
    }

    fn retract(&self, t: &Pose, d: &SVector<f64, 6>) -> Pose {
        t.retract(&Twist(*d))
    }
}

/// Midpoint of the common perpendicular of two rays `c + s·d`.
fn ray_midpoint(
    c1: &Vector3<f64>,
    d1: &Vector3<f64>,
    c2: &Vector3<f64>,
    d2: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    let b = d1.dot(d2);
    let denom = 1.0 - b * b;
    if denom <= f64::EPSILON {
        return None;
    }
    let w = c1 - c2;
    let (e, f) = (d1.dot(&w), d2.dot(&w));
    let s = (b * f - e) / denom;
    let t = (f - b * e) / denom;
    Some(((c1 + d1 * s) + (c2 + d2 * t)) * 0.5)
}

fn world_ray(pose: &Pose, pixel: &Vector2<f64>, k: &Intrinsics) -> Vector3<f64> {
    pose.rotation().rotate(&k.unproject(pixel)).normalize()
}

fn ray_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

enum PointOutcome {
    Kept(MapPoint),
    Rejected,
    Degenerate,
}

fn triangulate_point(
    point_id: PointId,
    views: Vec<(&Pose, Observation)>,
    k: &Intrinsics,
    cfg: &SolverConfig,
) -> PointOutcome {
    let rays: Vec<Vector3<f64>> = views.iter().map(|(t, o)| world_ray(t, &o.pixel, k)).collect();

    // Widest-baseline pair, falling back to the widest-angle pair when its
    // rays are parallel.
    let mut widest = (0, 1, -1.0);
    let mut steepest = (0, 1, -1.0);
    for i in 0..views.len() {
        for j in i + 1..views.len() {
            let baseline = (views[i].0.position() - views[j].0.position()).norm();
            if baseline > widest.2 {
                widest = (i, j, baseline);
            }
            let angle = ray_angle(&rays[i], &rays[j]);
            if baseline > 0.0 && angle > steepest.2 {
                steepest = (i, j, angle);
            }
        }
    }
    if widest.2 <= 1e-12 || steepest.2 < MIN_RAY_ANGLE {
        return PointOutcome::Degenerate;
    }
    let (i, j) = if ray_angle(&rays[widest.0], &rays[widest.1]) >= MIN_RAY_ANGLE {
        (widest.0, widest.1)
    } else {
        (steepest.0, steepest.1)
    };
    let Some(init) = ray_midpoint(views[i].0.position(), &rays[i], views[j].0.position(), &rays[j])
    else {
        return PointOutcome::Degenerate;
    };

    let problem = PointProblem {
        views: views.iter().map(|(t, o)| (*t, o.pixel)).collect(),
        k,
    };
    let outcome = match robust::solve(&problem, init, &cfg.lm()) {
        Ok(o) => o,
        Err(_) => return PointOutcome::Rejected,
    };
    let x = outcome.state;
    let in_front = views
        .iter()
        .all(|(t, _)| t.inverse_transform_point(&x).z > MIN_DEPTH);
    let mean_residual =
        outcome.residuals.iter().map(|r| r.norm()).sum::<f64>() / outcome.residuals.len() as f64;
    if !in_front || !(mean_residual <= cfg.residual_threshold) {
        return PointOutcome::Rejected;
    }
    PointOutcome::Kept(MapPoint {
        point_id,
        position: x,
        observations: views.into_iter().map(|(_, o)| o).collect(),
        mean_residual,
    })
}

/// Triangulates every point observed in at least two of `frames`.
///
/// Each point is initialized by the midpoint of its two widest-baseline
/// rays and refined by robust least squares with the frame poses fixed.
/// Points behind any observing camera or with a mean residual above
/// `cfg.residual_threshold` are rejected.
pub fn forward_intersection(
    frames: &[Frame],
    observations: &[Observation],
    k: &Intrinsics,
    cfg: &SolverConfig,
) -> Result<TriangulationResult> {
    cfg.validate()?;
    let poses: HashMap<FrameId, &Pose> = frames
        .iter()
        .map(|f| f.pose().map(|p| (f.id, p)))
        .collect::<Result<_>>()?;

    let mut by_point: BTreeMap<PointId, Vec<(&Pose, Observation)>> = BTreeMap::new();
    for o in observations {
        if let Some(pose) = poses.get(&o.frame_id) {
            by_point.entry(o.point_id).or_default().push((pose, *o));
        }
    }
    let most_views = by_point.values().map(Vec::len).max().unwrap_or(0);
    by_point.retain(|_, v| v.len() >= 2);
    if by_point.is_empty() {
        return Err(Error::InsufficientObservations {
            have: most_views,
            need: 2,
        });
    }

    let candidates = by_point.len();
    let mut map_points = Vec::new();
    let mut rejected_point_ids = Vec::new();
    let mut degenerate = 0;
    for (point_id, mut views) in by_point {
        views.sort_by_key(|(_, o)| o.frame_id);
        match triangulate_point(point_id, views, k, cfg) {
            PointOutcome::Kept(p) => map_points.push(p),
            PointOutcome::Rejected => rejected_point_ids.push(point_id),
            PointOutcome::Degenerate => {
                degenerate += 1;
                rejected_point_ids.push(point_id);
            }
        }
    }
    if degenerate == candidates {
        return Err(Error::DegenerateGeometry(
            "every candidate point has parallel observing rays".into(),
        ));
    }
    let mean_residual = if map_points.is_empty() {
        0.0
    } else {
        map_points.iter().map(|p| p.mean_residual).sum::<f64>() / map_points.len() as f64
    };
    Ok(TriangulationResult {
        map_points,
        rejected_point_ids,
        mean_residual,
    })
}

/// `(1/σ²) Σ Jᵀ (w I₂) J` at `pose`, with Huber weights `w` taken from the
/// residuals there.
pub fn pose_information(
    pose: &Pose,
    correspondences: &[(Vector3<f64>, Vector2<f64>)],
    k: &Intrinsics,
    huber: &Huber,
    residual_variance: f64,
) -> Result<Matrix6<f64>> {
    let mut info = Matrix6::zeros();
    for (x, obs) in correspondences {
        let r = project(pose, x, k)? - obs;
        let j = right_jacobian_residual(pose, x, k)?;
        let pixel_info = Matrix2::identity() * huber.weight(r.norm());
        info += j.transpose() * pixel_info * j;
    }
    Ok(info / residual_variance)
}

/// Inverts a symmetric positive-definite information matrix, rejecting it
/// when its condition number exceeds [`MAX_CONDITION`].
pub fn invert_information(info: &Matrix6<f64>) -> Result<Covariance6> {
    let sym = (info + info.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || !(hi / lo <= MAX_CONDITION) {
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        return Err(Error::SingularInformation { condition });
    }
    let chol = sym
        .cholesky()
        .ok_or(Error::SingularInformation { condition: f64::INFINITY })?;
    Ok(Covariance6::new(chol.inverse()))
}

/// Estimates the query pose from triangulated points.
///
/// `query_obs` are matched to `map_points` by point id and must all belong
/// to one frame. On convergence the residual variance is approximated as
/// `‖r‖²/(2p − 1)` over the `p` matched tracks and the covariance is the
/// inverse of the resulting information matrix.
pub fn backward_intersection(
    map_points: &[MapPoint],
    query_obs: &[Observation],
    k: &Intrinsics,
    init: &Pose,
    cfg: &SolverConfig,
) -> Result<GeometricEstimate> {
    cfg.validate()?;
    let frame_id = match query_obs.first() {
        Some(o) => o.frame_id,
        None => {
            return Err(Error::InsufficientObservations {
                have: 0,
                need: cfg.min_observations,
            })
        }
    };
    if query_obs.iter().any(|o| o.frame_id != frame_id) {
        return Err(Error::InvalidArgument(
            "query observations span more than one frame".into(),
        ));
    }
    let positions: HashMap<PointId, Vector3<f64>> =
        map_points.iter().map(|p| (p.point_id, p.position)).collect();
    let mut points: Vec<(Vector3<f64>, Vector2<f64>)> = query_obs
        .iter()
        .filter_map(|o| positions.get(&o.point_id).map(|x| (*x, o.pixel)))
        .collect();
    if points.len() < cfg.min_observations {
        return Err(Error::InsufficientObservations {
            have: points.len(),
            need: cfg.min_observations,
        });
    }
    // Points behind the initial camera cannot be used by the solver.
    points.retain(|(x, _)| init.inverse_transform_point(x).z > MIN_DEPTH);
    if points.len() < cfg.min_observations {
        return Err(Error::InsufficientObservations {
            have: points.len(),
            need: cfg.min_observations,
        });
    }

    let problem = PoseProblem { points, k };
    let outcome = robust::solve(&problem, *init, &cfg.lm())?;
    let pose = outcome.state;

    let p = problem.points.len();
    let residual_sum: f64 = outcome.residuals.iter().map(|r| r.norm_squared()).sum();
    let variance = (residual_sum / (2 * p - 1) as f64).max(MIN_RESIDUAL_VARIANCE);
    let huber = Huber::new(cfg.huber_delta);
    let info = pose_information(&pose, &problem.points, k, &huber, variance)?;
    let covariance = invert_information(&info)?;
    let (sigma_iso_p, sigma_iso_r) = isometric_sigmas(&covariance)?;

    Ok(GeometricEstimate {
        estimate: PoseEstimate {
            frame_id,
            timestamp: None,
            pose,
            covariance,
            source: Source::Geometric,
        },
        residual_sum,
        track_count: p,
        sigma_iso_p,
        sigma_iso_r,
        iterations: outcome.iterations,
        cost_history: outcome.cost_history,
    })
}

/// Scalar summaries of a pose covariance: `σ_p` is the mean of the three
/// positional standard deviations; `σ_r` is the angle of the rotation whose
/// rotation vector holds the three rotational standard deviations.
pub fn isometric_sigmas(c: &Covariance6) -> Result<(f64, f64)> {
    let m = c.matrix();
    let mut sd = [0.0; 6];
    for (i, s) in sd.iter_mut().enumerate() {
        let v = m[(i, i)];
        if v < -1e-12 || v.is_nan() {
            return Err(Error::NegativeVariance { value: v });
        }
        *s = v.max(0.0).sqrt();
    }
    let sigma_p = (sd[0] + sd[1] + sd[2]) / 3.0;
    // Angle of Exp(v) in closed form: ‖v‖ wrapped into [0, π].
    let turn = 2.0 * std::f64::consts::PI;
    let n = Vector3::new(sd[3], sd[4], sd[5]).norm() % turn;
    let sigma_r = if n <= std::f64::consts::PI { n } else { turn - n };
    Ok((sigma_p, sigma_r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{misalignment_angle, Rotation};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn intrinsics() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap()
    }

    /// Cameras on a line along x looking down +z.
    fn cameras(n: usize, spacing: f64) -> Vec<Frame> {
        (0..n)
            .map(|i| {
                Frame::with_pose(
                    i as FrameId,
                    Pose::from_translation(Vector3::new(i as f64 * spacing, 0.0, 0.0)),
                )
            })
            .collect()
    }

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(3.0..6.0),
                )
            })
            .collect()
    }

    fn observe(frames: &[Frame], points: &[Vector3<f64>], k: &Intrinsics) -> Vec<Observation> {
        let mut obs = Vec::new();
        for f in frames {
            for (j, x) in points.iter().enumerate() {
                let px = project(f.pose().unwrap(), x, k).unwrap();
                obs.push(Observation::new(f.id, j as PointId, px.x, px.y));
            }
        }
        obs
    }

    #[test]
    fn exact_triangulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = intrinsics();
        let frames = cameras(4, 0.1);
        let points = random_points(&mut rng, 119);
        let obs = observe(&frames, &points, &k);
        let tri = forward_intersection(&frames, &obs, &k, &SolverConfig::default()).unwrap();
        assert_eq!(tri.map_points.len(), 119);
        assert!(tri.rejected_point_ids.is_empty());
        for mp in &tri.map_points {
            assert!((mp.position - points[mp.point_id as usize]).norm() < 1e-6);
            assert!(mp.mean_residual < 1e-6);
        }
    }

    #[test]
    fn noisy_triangulation_residual_is_about_one_pixel() {
        // With σ = 1 px per axis the 2D error norm averages √(π/2) ≈ 1.25;
        // after fitting 3 of 8 dof per point the fitted residual norm drops
        // to roughly √(5/8) of that, ≈ 1 px.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = intrinsics();
        let frames = cameras(4, 0.3);
        let points = random_points(&mut rng, 1000);
        let mut obs = observe(&frames, &points, &k);
        for o in &mut obs {
            o.pixel.x += rng.sample::<f64, _>(StandardNormal);
            o.pixel.y += rng.sample::<f64, _>(StandardNormal);
        }
        let tri = forward_intersection(&frames, &obs, &k, &SolverConfig::default()).unwrap();
        assert!(tri.map_points.len() > 990, "{} kept", tri.map_points.len());
        assert!((tri.mean_residual - 1.0).abs() < 0.2, "{}", tri.mean_residual);
    }

    #[test]
    fn identical_centers_are_degenerate() {
        let k = intrinsics();
        let frames = vec![
            Frame::with_pose(0, Pose::identity()),
            Frame::with_pose(1, Pose::new(Rotation::rot_y(0.1), Vector3::zeros())),
        ];
        let x = Vector3::new(0.2, 0.1, 4.0);
        let obs = observe(&frames, &[x], &k);
        assert!(matches!(
            forward_intersection(&frames, &obs, &k, &SolverConfig::default()),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn single_view_points_are_insufficient() {
        let k = intrinsics();
        let frames = cameras(1, 0.1);
        let obs = observe(&frames, &[Vector3::new(0.0, 0.0, 4.0)], &k);
        assert!(matches!(
            forward_intersection(&frames, &obs, &k, &SolverConfig::default()),
            Err(Error::InsufficientObservations { .. })
        ));
    }

    #[test]
    fn outlier_points_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = intrinsics();
        let frames = cameras(4, 0.2);
        let points = random_points(&mut rng, 20);
        let mut obs = observe(&frames, &points, &k);
        // Point 5 gets inconsistent tracks in every view.
        for o in obs.iter_mut().filter(|o| o.point_id == 5) {
            o.pixel.y += 40.0 * (o.frame_id as f64 - 1.5);
        }
        let tri = forward_intersection(&frames, &obs, &k, &SolverConfig::default()).unwrap();
        assert_eq!(tri.rejected_point_ids, vec![5]);
        assert!(tri.map_points.iter().all(|p| p.mean_residual <= 5.0));
    }

    fn perturbed(pose: &Pose, meters: f64, degrees: f64) -> Pose {
        let axis = Vector3::new(0.3, -0.8, 0.5).normalize();
        let dir = Vector3::new(1.0, 1.0, -1.0).normalize();
        Pose::new(
            *pose.rotation() * Rotation::from_axis_angle(&axis, degrees.to_radians()),
            pose.position() + dir * meters,
        )
    }

    fn query_setup(seed: u64, n: usize) -> (Vec<MapPoint>, Vec<Observation>, Pose) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = intrinsics();
        let points = random_points(&mut rng, n);
        let truth = Pose::new(Rotation::rot_y(0.05), Vector3::new(0.15, 0.02, 0.0));
        let map: Vec<MapPoint> = points
            .iter()
            .enumerate()
            .map(|(j, x)| MapPoint {
                point_id: j as PointId,
                position: *x,
                observations: vec![],
                mean_residual: 0.0,
            })
            .collect();
        let q = Frame::with_pose(99, truth);
        let obs = observe(&[q], &points, &k);
        (map, obs, truth)
    }

    #[test]
    fn exact_resection_from_a_perturbed_start() {
        let (map, obs, truth) = query_setup(4, 119);
        let k = intrinsics();
        let init = perturbed(&truth, 0.05, 2.0);
        let est = backward_intersection(&map, &obs, &k, &init, &SolverConfig::default()).unwrap();
        let pose = est.estimate.pose;
        assert!((pose.position() - truth.position()).norm() < 1e-6);
        assert!(misalignment_angle(pose.rotation(), truth.rotation()) < 1e-6);
        assert!(est.residual_sum < 1e-12);
        assert_eq!(est.estimate.source, Source::Geometric);
        assert_eq!(est.estimate.frame_id, 99);
        assert!(est.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn too_few_matches() {
        let (map, obs, truth) = query_setup(5, 3);
        let err = backward_intersection(&map, &obs, &intrinsics(), &truth, &SolverConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::InsufficientObservations { have: 3, need: 4 }));
    }

    #[test]
    fn objective_never_increases() {
        let (map, mut obs, truth) = query_setup(6, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for o in &mut obs {
            o.pixel.x += 2.0 * rng.sample::<f64, _>(StandardNormal);
            o.pixel.y += 2.0 * rng.sample::<f64, _>(StandardNormal);
        }
        obs[3].pixel.x += 300.0;
        let init = perturbed(&truth, 0.2, 5.0);
        let est = backward_intersection(&map, &obs, &intrinsics(), &init, &SolverConfig::default()).unwrap();
        assert!(est.cost_history.len() > 1);
        assert!(est.cost_history.windows(2).all(|w| w[1] <= w[0]));
        // Information is SPD and the covariance is its inverse.
        assert!(est.estimate.covariance.is_positive_semidefinite(0.0));
    }

    #[test]
    fn covariance_shrinks_with_more_observations() {
        let (map, obs, truth) = query_setup(7, 100);
        let k = intrinsics();
        let huber = Huber::new(1.0);
        let all: Vec<(Vector3<f64>, Vector2<f64>)> = obs
            .iter()
            .map(|o| (map[o.point_id as usize].position, o.pixel))
            .collect();
        let mut prev = f64::INFINITY;
        for n in [10, 25, 50, 100] {
            let info = pose_information(&truth, &all[..n], &k, &huber, 1.0).unwrap();
            let trace = invert_information(&info).unwrap().matrix().trace();
            assert!(trace <= prev, "n={n}: {trace} > {prev}");
            prev = trace;
        }
    }

    #[test]
    fn covariance_is_inverse_information() {
        let (map, mut obs, truth) = query_setup(8, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        for o in &mut obs {
            o.pixel.x += rng.sample::<f64, _>(StandardNormal);
            o.pixel.y += rng.sample::<f64, _>(StandardNormal);
        }
        let k = intrinsics();
        let cfg = SolverConfig::default();
        let est = backward_intersection(&map, &obs, &k, &truth, &cfg).unwrap();
        let corr: Vec<_> = obs.iter().map(|o| (map[o.point_id as usize].position, o.pixel)).collect();
        let variance = est.residual_sum / (2.0 * 60.0 - 1.0);
        let info = pose_information(&est.estimate.pose, &corr, &k, &Huber::new(1.0), variance).unwrap();
        let prod = info * est.estimate.covariance.matrix();
        assert!((prod - Matrix6::identity()).abs().max() < 1e-8);
    }

    #[test]
    fn singular_information_is_reported() {
        let mut info = Matrix6::identity();
        info[(5, 5)] = 1e-14;
        assert!(matches!(
            invert_information(&info),
            Err(Error::SingularInformation { .. })
        ));
    }

    #[test]
    fn isometric_sigma_cases() {
        let (p, r) = isometric_sigmas(&Covariance6::from_diagonal(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!((p, r), (1.0, 0.0));
        let a = 0.03;
        let (_, r) = isometric_sigmas(&Covariance6::from_diagonal(&[0.0, 0.0, 0.0, a * a, 0.0, 0.0])).unwrap();
        assert_relative_eq!(r, a, epsilon = 1e-12);
        let (p, _) = isometric_sigmas(&Covariance6::from_diagonal(&[4.0, 1.0, 1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_relative_eq!(p, 4.0 / 3.0, epsilon = 1e-15);
        assert!(matches!(
            isometric_sigmas(&Covariance6::from_diagonal(&[-1.0, 1.0, 1.0, 0.0, 0.0, 0.0])),
            Err(Error::NegativeVariance { .. })
        ));
    }

    #[test]
    fn isometric_sigmas_scale_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = SMatrix::<f64, 6, 6>::from_fn(|_, _| rng.random_range(-0.01..0.01));
        let c = Covariance6::new(a * a.transpose());
        let (p1, r1) = isometric_sigmas(&c).unwrap();
        let (p2, r2) = isometric_sigmas(&c.scaled(9.0)).unwrap();
        assert_relative_eq!(p2, 3.0 * p1, max_relative = 1e-12);
        assert_relative_eq!(r2, 3.0 * r1, max_relative = 1e-12);
    }
}
