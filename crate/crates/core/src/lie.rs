//! SO(3) and SE(3) on 3×3 rotation matrices.
//!
//! Twists are ordered `(ρ, φ)`: the first three components are the
//! translational part in meters, the last three the rotational part in
//! radians. Covariances over twists use the same ordering, so the upper-left
//! 3×3 block is positional and the lower-right block is rotational.
//!
//! Perturbations are applied on the right, `T ← T · exp(δ)`, and the
//! Jacobians follow that convention.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotation angles closer than this to π are rejected by the logarithm.
pub const NEAR_PI_MARGIN: f64 = 1e-6;

const SMALL_ANGLE: f64 = 1e-8;
// Coefficients with cancellation switch to series well before SMALL_ANGLE.
const SERIES_ANGLE: f64 = 1e-2;
const ORTHO_TOLERANCE: f64 = 1e-9;

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// sin θ / θ
fn sinc(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        1.0 - theta * theta / 6.0
    } else {
        theta.sin() / theta
    }
}

/// (1 − cos θ) / θ²
fn cos_coeff(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        0.5 - theta * theta / 24.0
    } else {
        let s = sinc(0.5 * theta);
        0.5 * s * s
    }
}

/// (θ − sin θ) / θ³
fn sin_coeff(theta: f64) -> f64 {
    let t2 = theta * theta;
    if theta < SERIES_ANGLE {
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (theta - theta.sin()) / (t2 * theta)
    }
}

/// (1 − θ sin θ / (2 (1 − cos θ))) / θ², the quadratic coefficient of J⁻¹.
fn inv_coeff(theta: f64) -> f64 {
    let t2 = theta * theta;
    if theta < SERIES_ANGLE {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        (1.0 - 0.5 * sinc(theta) / cos_coeff(theta)) / t2
    }
}

/// An element of SO(3) stored as an orthonormal 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix, projecting it onto SO(3) when its orthogonality
    /// defect exceeds 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        let r = Rotation(m);
        if r.orthogonality_defect() > ORTHO_TOLERANCE {
            r.reorthonormalized()
        } else {
            r
        }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis * (angle / n)))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::exp(&Vector3::new(angle, 0.0, 0.0))
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::exp(&Vector3::new(0.0, angle, 0.0))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::exp(&Vector3::new(0.0, 0.0, angle))
    }

    /// Normalizes `q` before conversion.
    pub fn from_quaternion(q: &Quaternion<f64>) -> Self {
        let uq = UnitQuaternion::from_quaternion(*q);
        Rotation(*uq.to_rotation_matrix().matrix())
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.0)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn orthogonality_defect(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).abs().max()
    }

    /// Nearest rotation in the Frobenius sense.
    pub fn reorthonormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation(u * d * v_t)
    }

    /// Rodrigues' formula.
    pub fn exp(phi: &Vector3<f64>) -> Self {
        let theta = phi.norm();
        let k = hat(phi);
        Rotation(Matrix3::identity() + k * sinc(theta) + k * k * cos_coeff(theta))
    }

    /// Rotation vector with norm in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        let r = &self.0;
        let axis_sin = vee(r); // sin θ · a
        let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let sin = axis_sin.norm();
        let theta = sin.atan2(cos);
        if theta < SMALL_ANGLE {
            // Second-order: vee(R) = φ (1 − θ²/6)
            return axis_sin * (1.0 + theta * theta / 6.0);
        }
        if cos > -0.9 {
            return axis_sin * (theta / sin);
        }
        // Near π the antisymmetric part vanishes; recover the axis from the
        // symmetric part, (R + Rᵀ)/2 − cos θ·I = (1 − cos θ) a aᵀ.
        let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
        let diag = sym.diagonal();
        let col = diag.imax();
        let mut axis: Vector3<f64> = sym.column(col).into_owned();
        axis /= axis.norm();
        if axis.dot(&axis_sin) < 0.0 {
            axis = -axis;
        }
        axis * theta
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        trace_angle(&self.0)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation::from_matrix(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;

    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Angle of the rotation matrix `m`: `acos((Tr(m) − 1)/2)` with the argument
/// clamped to `[−1, 1]`. Near zero the equivalent `asin` of the
/// antisymmetric part is used because acos loses half its digits there.
fn trace_angle(m: &Matrix3<f64>) -> f64 {
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    if c > 0.99 {
        vee(m).norm().min(1.0).asin()
    } else {
        c.acos()
    }
}

/// Misalignment angle Θ(R1ᵀR2) between two orientations, in `[0, π]`.
pub fn misalignment_angle(r1: &Rotation, r2: &Rotation) -> f64 {
    trace_angle(&(r1.0.transpose() * r2.0))
}

/// SO(3) left Jacobian.
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    Matrix3::identity() + k * cos_coeff(theta) + k * k * sin_coeff(theta)
}

pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    Matrix3::identity() - k * 0.5 + k * k * inv_coeff(theta)
}

pub fn so3_right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian(&-phi)
}

pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian_inv(&-phi)
}

/// A 6-vector in se(3), ordered `(ρ, φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Twist(Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z))
    }

    pub fn from_slice(v: &[f64; 6]) -> Self {
        Twist(Vector6::from_column_slice(v))
    }

    pub fn zero() -> Self {
        Twist(Vector6::zeros())
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn vector(&self) -> &Vector6<f64> {
        &self.0
    }

    pub fn scaled(&self, s: f64) -> Twist {
        Twist(self.0 * s)
    }
}

/// Rigid transform: rotation plus position, mapping camera coordinates to
/// world coordinates (`x_world = R x_cam + p`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Rotation,
    position: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, position: Vector3<f64>) -> Self {
        Pose { rotation, position }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(position: Vector3<f64>) -> Self {
        Pose::new(Rotation::identity(), position)
    }

    /// `T|_r`
    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    /// `T|_p`
    pub fn position(&self) -> &Vector3<f64> {
        &self.position
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt.0 * self.position))
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.0 * x + self.position
    }

    /// Maps a world point into this frame, `T⁻¹ x`.
    pub fn inverse_transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.0.transpose() * (x - self.position)
    }

    pub fn exp(xi: &Twist) -> Pose {
        let rho = xi.translation();
        let phi = xi.rotation();
        Pose::new(Rotation::exp(&phi), so3_left_jacobian(&phi) * rho)
    }

    /// Errors with `NearPiRotation` when the rotation angle is within 1e-6
    /// of π.
    pub fn log(&self) -> Result<Twist> {
        if self.rotation.angle() > PI - NEAR_PI_MARGIN {
            return Err(Error::NearPiRotation);
        }
        let phi = self.rotation.log();
        let rho = so3_left_jacobian_inv(&phi) * self.position;
        Ok(Twist::new(rho, phi))
    }

    /// `T^s = exp(s · log T)`.
    pub fn powf(&self, s: f64) -> Result<Pose> {
        Ok(Pose::exp(&self.log()?.scaled(s)))
    }

    /// `T · exp(δ)`
    pub fn retract(&self, delta: &Twist) -> Pose {
        *self * Pose::exp(delta)
    }

    /// Adjoint of this pose acting on `(ρ, φ)` twists.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation.0;
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(hat(&self.position) * r));
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose::new(
            self.rotation * rhs.rotation,
            self.rotation.0 * rhs.position + self.position,
        )
    }
}

pub fn exp_se3(xi: &Twist) -> Pose {
    Pose::exp(xi)
}

pub fn log_se3(t: &Pose) -> Result<Twist> {
    t.log()
}

/// `‖log(T1⁻¹ T2)^∨‖₂`
pub fn pose_distance(t1: &Pose, t2: &Pose) -> Result<f64> {
    Ok((t1.inverse() * *t2).log()?.norm())
}

/// The Q block of the SE(3) left Jacobian.
fn se3_q(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let t2 = theta * theta;
    let rx = hat(rho);
    let px = hat(phi);
    let pr = px * rx;
    let rp = rx * px;
    let prp = pr * px;

    let (c1, c2, c3) = if theta < SERIES_ANGLE {
        (
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (
            (theta - s) / (t2 * theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta),
        )
    };

    rx * 0.5 + (pr + rp + prp) * c1 + (px * pr + rp * px - prp * 3.0) * c2
        + (prp * px + px * prp) * c3
}

/// SE(3) left Jacobian in `(ρ, φ)` ordering.
pub fn se3_left_jacobian(xi: &Twist) -> Matrix6<f64> {
    let rho = xi.translation();
    let phi = xi.rotation();
    let j = so3_left_jacobian(&phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&se3_q(&rho, &phi));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out
}

pub fn se3_left_jacobian_inv(xi: &Twist) -> Matrix6<f64> {
    let rho = xi.translation();
    let phi = xi.rotation();
    let j_inv = so3_left_jacobian_inv(&phi);
    let q = se3_q(&rho, &phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-j_inv * q * j_inv));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_inv);
    out
}

/// SE(3) right Jacobian, `J_r(ξ) = J_l(−ξ)`.
pub fn se3_right_jacobian(xi: &Twist) -> Matrix6<f64> {
    se3_left_jacobian(&xi.scaled(-1.0))
}

pub fn se3_right_jacobian_inv(xi: &Twist) -> Matrix6<f64> {
    se3_left_jacobian_inv(&xi.scaled(-1.0))
}

/// Symmetric 6×6 covariance over `(ρ, φ)` twist coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct Covariance6(Matrix6<f64>);

impl Covariance6 {
    /// Symmetrizes `m`.
    pub fn new(m: Matrix6<f64>) -> Self {
        Covariance6((m + m.transpose()) * 0.5)
    }

    pub fn zeros() -> Self {
        Covariance6(Matrix6::zeros())
    }

    pub fn from_diagonal(d: &[f64; 6]) -> Self {
        Covariance6(Matrix6::from_diagonal(&Vector6::from_column_slice(d)))
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Covariance6(self.0 * s)
    }

    pub fn is_positive_semidefinite(&self, tol: f64) -> bool {
        self.0.symmetric_eigenvalues().iter().all(|&e| e >= -tol)
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 36] {
        let mut out = [0.0; 36];
        for r in 0..6 {
            for c in 0..6 {
                out[r * 6 + c] = self.0[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64]) -> Option<Self> {
        if v.len() != 36 {
            return None;
        }
        Some(Covariance6::new(Matrix6::from_row_slice(v)))
    }
}

impl From<Covariance6> for Vec<f64> {
    fn from(c: Covariance6) -> Self {
        c.to_row_major().to_vec()
    }
}

impl TryFrom<Vec<f64>> for Covariance6 {
    type Error = String;

    fn try_from(v: Vec<f64>) -> std::result::Result<Self, String> {
        Covariance6::from_row_major(&v)
            .ok_or_else(|| format!("expected 36 covariance entries, found {}", v.len()))
    }
}
