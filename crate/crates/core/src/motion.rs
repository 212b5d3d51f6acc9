//! Constant-velocity motion model over a short pose history, and
//! uncertainty-weighted fusion of its prediction with a geometric estimate.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::lie::{
    misalignment_angle, se3_left_jacobian, se3_left_jacobian_inv, se3_right_jacobian_inv,
    Covariance6, Pose, Twist,
};
use crate::locator::GeometricEstimate;
use crate::scene::{PoseEstimate, Source};

/// Default number of historical frames in the motion window.
pub const DEFAULT_WINDOW: usize = 4;
/// Element-wise floor on the motion-model covariance diagonal.
pub const MOTION_VARIANCE_FLOOR: f64 = 1e-8;
/// Gate width in standard deviations.
pub const GATE_SIGMAS: f64 = 3.0;

const MAX_ITERATIONS: usize = 50;
const STEP_TOLERANCE: f64 = 1e-12;

/// Recent fused estimates, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionWindow {
    history: VecDeque<PoseEstimate>,
    t: usize,
}

impl MotionWindow {
    pub fn new(t: usize) -> Result<Self> {
        if t < 2 {
            return Err(Error::InvalidArgument(format!("window length must be >= 2, got {t}")));
        }
        Ok(MotionWindow {
            history: VecDeque::with_capacity(t + 1),
            t,
        })
    }

    pub fn capacity(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn history(&self) -> impl Iterator<Item = &PoseEstimate> {
        self.history.iter()
    }

    pub fn last(&self) -> Option<&PoseEstimate> {
        self.history.back()
    }

    /// Appends an estimate, evicting the oldest once the window is full.
    /// Frame ids must increase.
    pub fn push(&mut self, estimate: PoseEstimate) -> Result<()> {
        if let Some(last) = self.history.back() {
            if estimate.frame_id <= last.frame_id {
                return Err(Error::InvalidArgument(format!(
                    "frame {} does not follow frame {}",
                    estimate.frame_id, last.frame_id
                )));
            }
        }
        self.history.push_back(estimate);
        while self.history.len() > self.t {
            self.history.pop_front();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionPrediction {
    pub estimate: PoseEstimate,
    /// Fitted backward per-step motion δ.
    pub delta: Pose,
    /// Residual twist of each window frame at the optimum, most recent first.
    pub fit_residuals: Vec<Twist>,
}

fn residual(anchor: &Pose, eta: &Twist, n: f64, pose: &Pose) -> Result<Twist> {
    (Pose::exp(&eta.scaled(-n)) * anchor.inverse() * *pose).log()
}

/// Fits `T_j ≈ A·δ^{j−1}` (j = 1 is the most recent frame) by Gauss-Newton
/// over the anchor `A` (right perturbation) and `η = log δ`, then predicts
/// the next frame as `A·δ⁻¹`.
///
/// The covariance is diagonal: per-coordinate `Σ e²/max(n − 2, 1)` over the
/// fit residuals, floored at [`MOTION_VARIANCE_FLOOR`].
pub fn fit_motion_model(window: &MotionWindow) -> Result<MotionPrediction> {
    let poses: Vec<Pose> = window.history.iter().rev().map(|e| e.pose).collect();
    let n = poses.len();
    if n < 2 {
        return Err(Error::InsufficientHistory { have: n, need: 2 });
    }

    let mut anchor = poses[0];
    let mut eta = (poses[0].inverse() * poses[1]).log()?;
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let mut jac = DMatrix::<f64>::zeros(6 * n, 12);
        let mut res = DVector::<f64>::zeros(6 * n);
        for (j, pose) in poses.iter().enumerate() {
            let k = j as f64;
            let e = residual(&anchor, &eta, k, pose)?;
            let jl_inv = se3_left_jacobian_inv(&e);
            let d_alpha = -jl_inv * Pose::exp(&eta.scaled(-k)).adjoint();
            let d_beta = -jl_inv * se3_left_jacobian(&eta.scaled(-k)) * k;
            jac.view_mut((6 * j, 0), (6, 6)).copy_from(&d_alpha);
            jac.view_mut((6 * j, 6), (6, 6)).copy_from(&d_beta);
            res.rows_mut(6 * j, 6).copy_from(e.vector());
        }
        let h = jac.transpose() * &jac;
        let g = jac.transpose() * &res;
        let step = h
            .cholesky()
            .ok_or_else(|| Error::DegenerateGeometry("motion normal equations are singular".into()))?
            .solve(&(-g));
        anchor = anchor.retract(&Twist(Vector6::from_iterator(step.rows(0, 6).iter().copied())));
        eta = Twist(eta.0 + Vector6::from_iterator(step.rows(6, 6).iter().copied()));
        if step.norm() < STEP_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: MAX_ITERATIONS,
        });
    }

    let fit_residuals = poses
        .iter()
        .enumerate()
        .map(|(j, p)| residual(&anchor, &eta, j as f64, p))
        .collect::<Result<Vec<_>>>()?;
    let dof = n.saturating_sub(2).max(1) as f64;
    let mut diag = [0.0; 6];
    for (c, d) in diag.iter_mut().enumerate() {
        let ss: f64 = fit_residuals.iter().map(|e| e.0[c] * e.0[c]).sum();
        *d = (ss / dof).max(MOTION_VARIANCE_FLOOR);
    }

    let delta = Pose::exp(&eta);
    let last = window.history.back().expect("window holds at least two frames");
    Ok(MotionPrediction {
        estimate: PoseEstimate {
            frame_id: last.frame_id + 1,
            timestamp: None,
            pose: anchor * delta.inverse(),
            covariance: Covariance6::from_diagonal(&diag),
            source: Source::Motion,
        },
        delta,
        fit_residuals,
    })
}

/// Inverse of a positive-definite matrix. LU is used for the inverse itself
/// so diagonal inputs invert exactly.
fn spd_inverse(m: &Matrix6<f64>) -> Result<Matrix6<f64>> {
    if m.cholesky().is_none() {
        return Err(Error::SingularCovariance);
    }
    m.try_inverse().ok_or(Error::SingularCovariance)
}

fn information(c: &Covariance6) -> Result<Matrix6<f64>> {
    spd_inverse(c.matrix())
}

/// `Σ_X e_Xᵀ C_X⁻¹ e_X` with `e_X = log(T_X⁻¹ T)`.
pub fn fusion_objective(t: &Pose, inputs: &[(&Pose, &Covariance6)]) -> Result<f64> {
    let mut total = 0.0;
    for (p, c) in inputs {
        let e = (p.inverse() * *t).log()?;
        total += e.0.dot(&(information(c)? * e.0));
    }
    Ok(total)
}

/// Information-weighted fusion of the geometric and motion estimates on
/// SE(3). Gauss-Newton from the geometric pose; the fused covariance is the
/// inverse of the Gauss-Newton information at the optimum.
pub fn fuse(geo: &PoseEstimate, motion: &PoseEstimate) -> Result<PoseEstimate> {
    let inputs = [
        (&geo.pose, information(&geo.covariance)?),
        (&motion.pose, information(&motion.covariance)?),
    ];
    let mut fused = geo.pose;
    for iteration in 0..=MAX_ITERATIONS {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (p, info) in &inputs {
            let e = (p.inverse() * fused).log()?;
            let j = se3_right_jacobian_inv(&e);
            h += j.transpose() * info * j;
            g += j.transpose() * info * e.0;
        }
        let step = h.cholesky().ok_or(Error::SingularCovariance)?.solve(&(-g));
        if step.norm() < STEP_TOLERANCE {
            return Ok(PoseEstimate {
                frame_id: geo.frame_id,
                timestamp: geo.timestamp,
                pose: fused,
                covariance: Covariance6::new(spd_inverse(&h)?),
                source: Source::Fused,
            });
        }
        if iteration == MAX_ITERATIONS {
            break;
        }
        fused = fused.retract(&Twist(step));
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
    })
}

/// True when the geometric estimate lies more than three of its own
/// isometric sigmas from the motion prediction, in position or rotation.
pub fn gate_rejects(geo: &GeometricEstimate, motion: &PoseEstimate) -> bool {
    let g = &geo.estimate.pose;
    let dp = (g.position() - motion.pose.position()).norm();
    let dtheta = misalignment_angle(g.rotation(), motion.pose.rotation());
    dp > GATE_SIGMAS * geo.sigma_iso_p || dtheta > GATE_SIGMAS * geo.sigma_iso_r
}

/// Combines whichever estimates are available. With both, a geometric
/// estimate failing the gate is replaced by the motion prediction;
/// otherwise the two are fused.
pub fn gate_and_fuse(
    geo: Option<&GeometricEstimate>,
    motion: Option<&MotionPrediction>,
) -> Result<PoseEstimate> {
    match (geo, motion) {
        (None, None) => Err(Error::NoInput),
        (Some(g), None) => Ok(g.estimate.clone()),
        (None, Some(m)) => Ok(m.estimate.clone()),
        (Some(g), Some(m)) => {
            if gate_rejects(g, &m.estimate) {
                let mut out = m.estimate.clone();
                out.frame_id = g.estimate.frame_id;
                out.timestamp = g.estimate.timestamp;
                Ok(out)
            } else {
                fuse(&g.estimate, &m.estimate)
            }
        }
    }
}
