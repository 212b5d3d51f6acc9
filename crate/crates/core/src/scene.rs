//! Dataset types shared by every stage, plus the pinhole projection.

use std::fmt;

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Matrix3x4, Matrix3x6, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{hat, Covariance6, Pose};

/// Depths at or below this are rejected by [`project`].
pub const MIN_DEPTH: f64 = 1e-9;

pub type FrameId = u64;
pub type PointId = u64;

/// Pinhole intrinsics. `width`/`height` are optional image bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: Option<f64>,
    pub height: Option<f64>,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        Ok(Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width: None,
            height: None,
        })
    }

    pub fn with_bounds(mut self, width: f64, height: f64) -> Self {
        self.width = Some(width);
        self.height = Some(height);
        self
    }

    pub fn k3(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `[K₃ₓ₃ | 0]`
    pub fn k(&self) -> Matrix3x4<f64> {
        let mut k = Matrix3x4::zeros();
        k.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.k3());
        k
    }

    /// Unit-depth ray through a pixel, in the camera frame.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    /// True when bounds are undeclared or the pixel lies inside them.
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        let inside = |v: f64, bound: Option<f64>| bound.map_or(true, |b| v >= 0.0 && v <= b);
        inside(pixel.x, self.width) && inside(pixel.y, self.height)
    }

    /// Pixel of a point already in the camera frame.
    pub fn project_camera(&self, xc: &Vector3<f64>) -> Result<Vector2<f64>> {
        if xc.z <= MIN_DEPTH {
            return Err(Error::NonPositiveDepth { depth: xc.z });
        }
        Ok(Vector2::new(
            self.fx * xc.x / xc.z + self.cx,
            self.fy * xc.y / xc.z + self.cy,
        ))
    }

    /// Derivative of the pixel with respect to the camera-frame point.
    pub fn projection_jacobian(&self, xc: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / xc.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * xc.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * xc.y * iz2,
        )
    }
}

/// `Π(T, X)`: pixel of world point `x` seen from a camera at pose `t`.
pub fn project(t: &Pose, x: &Vector3<f64>, k: &Intrinsics) -> Result<Vector2<f64>> {
    k.project_camera(&t.inverse_transform_point(x))
}

/// Jacobian of the residual `Π(T, X) − x̃` with respect to a right
/// perturbation `T · exp(δ)`, `δ = (ρ, φ)`.
///
/// Under the perturbation the camera-frame point moves to
/// `exp(−δ) X_c ≈ X_c − ρ + [X_c]ₓ φ`.
pub fn right_jacobian_residual(t: &Pose, x: &Vector3<f64>, k: &Intrinsics) -> Result<Matrix2x6<f64>> {
    let xc = t.inverse_transform_point(x);
    if xc.z <= MIN_DEPTH {
        return Err(Error::NonPositiveDepth { depth: xc.z });
    }
    let dp = k.projection_jacobian(&xc);
    let mut d = Matrix3x6::zeros();
    d.fixed_view_mut::<3, 3>(0, 0).copy_from(&-Matrix3::identity());
    d.fixed_view_mut::<3, 3>(0, 3).copy_from(&hat(&xc));
    Ok(dp * d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: FrameId,
    pub timestamp: Option<f64>,
    pub label_pose: Option<Pose>,
    pub descriptor: Option<Vec<f32>>,
}

impl Frame {
    pub fn new(id: FrameId) -> Self {
        Frame {
            id,
            timestamp: None,
            label_pose: None,
            descriptor: None,
        }
    }

    pub fn with_pose(id: FrameId, pose: Pose) -> Self {
        Frame {
            label_pose: Some(pose),
            ..Frame::new(id)
        }
    }

    pub fn pose(&self) -> Result<&Pose> {
        self.label_pose
            .as_ref()
            .ok_or(Error::MissingPose { frame_id: self.id })
    }
}

/// Pixel `x^j_k` of point `j` tracked in frame `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub frame_id: FrameId,
    pub point_id: PointId,
    pub pixel: Vector2<f64>,
}

impl Observation {
    pub fn new(frame_id: FrameId, point_id: PointId, u: f64, v: f64) -> Self {
        Observation {
            frame_id,
            point_id,
            pixel: Vector2::new(u, v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub point_id: PointId,
    pub position: Vector3<f64>,
    pub observations: Vec<Observation>,
    /// Mean reprojection error over `observations`, in pixels.
    pub mean_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Geometric,
    Motion,
    Fused,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Geometric => "geometric",
            Source::Motion => "motion",
            Source::Fused => "fused",
        })
    }
}

/// A pose with its twist covariance and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub frame_id: FrameId,
    pub timestamp: Option<f64>,
    pub pose: Pose,
    pub covariance: Covariance6,
    pub source: Source,
}

impl PoseEstimate {
    pub fn with_covariance(mut self, covariance: Covariance6) -> Self {
        self.covariance = covariance;
        self
    }
}
