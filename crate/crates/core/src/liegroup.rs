//! SE(3) arithmetic on unit-quaternion poses.
//!
//! Tangent vectors are ordered rotation-first, `[ω; ρ]`, everywhere in the
//! crate: residuals, noise variances and file I/O all share this layout.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Six-vector `[ω (rad); ρ (m)]`.
pub type Tangent = Vector6<f64>;

/// Smallest variance a [`DiagonalNoise`] may hold.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Rotation angles closer than this to π are on the cut locus of `log`.
pub const CUT_LOCUS_EPS: f64 = 1e-9;

const SMALL_ANGLE: f64 = 1e-8;
const SERIES_ANGLE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("rotation angle {angle} is within {CUT_LOCUS_EPS} of pi; log branch is ambiguous")]
    CutLocus { angle: f64 },
    #[error("variance {value} at component {index} must be positive and finite")]
    BadVariance { index: usize, value: f64 },
    #[error("cannot average an empty set of poses")]
    EmptyMean,
}

/// Rigid transform: rotation followed by translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let q = UnitQuaternion::new_normalize(q.into_inner());
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    /// Builds a pose from a (possibly unnormalized) quaternion `w, x, y, z`.
    ///
    /// Quaternions already unit to within 1e-10 are kept bit-exact, so poses
    /// read back from text print the same digits again.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64, translation: Vector3<f64>) -> Self {
        let q = Quaternion::new(w, x, y, z);
        if (q.norm() - 1.0).abs() > 1e-10 {
            return Self::new(UnitQuaternion::new_normalize(q), translation);
        }
        let q = if q.w < 0.0 { -q } else { q };
        Self {
            rotation: UnitQuaternion::new_unchecked(q),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Homogeneous 4×4 matrix.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.translation + self.rotation * other.translation,
        )
    }

    /// `self⁻¹ ∘ other`.
    pub fn between(&self, other: &Pose) -> Self {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Adjoint in the `[ω; ρ]` layout: `exp(Ad·ξ) = T·exp(ξ)·T⁻¹`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation_matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(hat(&self.translation) * r));
        ad
    }

    /// Right perturbation `self ∘ exp(delta)`.
    pub fn retract(&self, delta: &Tangent) -> Self {
        self.compose(&exp(delta))
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let q = self.rotation.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    /// Logarithm, rejecting rotations on the cut locus.
    pub fn log(&self) -> Result<Tangent, LieError> {
        let angle = self.angle();
        if std::f64::consts::PI - angle < CUT_LOCUS_EPS {
            return Err(LieError::CutLocus { angle });
        }
        Ok(self.log_principal())
    }

    /// Logarithm that always returns the `w ≥ 0` branch, including at angle π.
    pub fn log_principal(&self) -> Tangent {
        let omega = so3_log(&self.rotation);
        let rho = so3_left_jacobian_inv(&omega) * self.translation;
        let mut xi = Tangent::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&omega);
        xi.fixed_rows_mut::<3>(3).copy_from(&rho);
        xi
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;
    fn mul(self, rhs: &'a Pose) -> Pose {
        self.compose(rhs)
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [w, x, y, z] = self.wxyz();
        let t = self.translation;
        write!(
            f,
            "Pose(t: [{:.4}, {:.4}, {:.4}], q: [{:.4}, {:.4}, {:.4}, {:.4}])",
            t.x, t.y, t.z, w, x, y, z
        )
    }
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn so3_exp(omega: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = omega.norm();
    let (w, k) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 8.0, 0.5 - t2 / 48.0)
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    let v = omega * k;
    UnitQuaternion::new_normalize(Quaternion::new(w, v.x, v.y, v.z))
}

fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = q.quaternion();
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let s = v.norm();
    if s < SMALL_ANGLE {
        // atan(s/w)/s expanded around s = 0
        let ratio = s * s / (w * w);
        v * (2.0 / w) * (1.0 - ratio / 3.0)
    } else {
        let theta = 2.0 * s.atan2(w);
        v * (theta / s)
    }
}

/// Left Jacobian of SO(3); also the `V` matrix mapping `ρ` to translation.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let (b, c) = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        (
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    let w = hat(omega);
    Matrix3::identity() + w * b + w * w * c
}

pub fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let d = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    let w = hat(omega);
    Matrix3::identity() - w * 0.5 + w * w * d
}

// Coupling block of the SE(3) left Jacobian.
fn se3_q_block(omega: &Vector3<f64>, rho: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let t2 = theta * theta;
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
    let w = hat(omega);
    let r = hat(rho);
    let wr = w * r;
    let rw = r * w;
    let wrw = wr * w;
    let ww = w * w;
    r * 0.5 + (wr + rw + wrw) * c1 + (ww * r + rw * w - wrw * 3.0) * c2 + (wrw * w + w * wrw) * c3
}

/// Left Jacobian of SE(3): `exp(ξ + δ) ≈ exp(Jl(ξ)·δ) ∘ exp(ξ)`.
pub fn se3_left_jacobian(xi: &Tangent) -> Matrix6<f64> {
    let omega = xi.fixed_rows::<3>(0).into_owned();
    let rho = xi.fixed_rows::<3>(3).into_owned();
    let j = so3_left_jacobian(&omega);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&se3_q_block(&omega, &rho));
    out
}

pub fn se3_left_jacobian_inv(xi: &Tangent) -> Matrix6<f64> {
    let omega = xi.fixed_rows::<3>(0).into_owned();
    let rho = xi.fixed_rows::<3>(3).into_owned();
    let j_inv = so3_left_jacobian_inv(&omega);
    let q = se3_q_block(&omega, &rho);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-j_inv * q * j_inv));
    out
}

/// Right Jacobian of SE(3): `exp(ξ + δ) ≈ exp(ξ) ∘ exp(Jr(ξ)·δ)`.
pub fn se3_right_jacobian(xi: &Tangent) -> Matrix6<f64> {
    se3_left_jacobian(&-xi)
}

pub fn se3_right_jacobian_inv(xi: &Tangent) -> Matrix6<f64> {
    se3_left_jacobian_inv(&-xi)
}

/// SE(3) exponential.
pub fn exp(xi: &Tangent) -> Pose {
    let omega = xi.fixed_rows::<3>(0).into_owned();
    let rho = xi.fixed_rows::<3>(3).into_owned();
    Pose::new(so3_exp(&omega), so3_left_jacobian(&omega) * rho)
}

/// SE(3) logarithm; see [`Pose::log`].
pub fn log(pose: &Pose) -> Result<Tangent, LieError> {
    pose.log()
}

/// `a⁻¹ ∘ b`.
pub fn between(a: &Pose, b: &Pose) -> Pose {
    a.between(b)
}

/// Per-component variances of a diagonal covariance, `[ω; ρ]` order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct DiagonalNoise {
    variances: Vector6<f64>,
}

impl DiagonalNoise {
    /// Rejects non-positive or non-finite entries; clamps to [`VARIANCE_FLOOR`].
    pub fn new(variances: Vector6<f64>) -> Result<Self, LieError> {
        for (index, &value) in variances.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(LieError::BadVariance { index, value });
            }
        }
        Ok(Self {
            variances: variances.map(|v| v.max(VARIANCE_FLOOR)),
        })
    }

    pub fn isotropic(variance: f64) -> Self {
        Self::new(Vector6::repeat(variance)).expect("isotropic variance must be positive")
    }

    /// Applies the floor to arbitrary non-negative values (e.g. a closed-form update).
    pub fn floored(variances: Vector6<f64>) -> Self {
        Self {
            variances: variances.map(|v| if v.is_nan() { VARIANCE_FLOOR } else { v.max(VARIANCE_FLOOR) }),
        }
    }

    pub fn variances(&self) -> &Vector6<f64> {
        &self.variances
    }

    pub fn information(&self) -> Vector6<f64> {
        self.variances.map(|v| 1.0 / v)
    }

    /// `Σ^{-1/2}` as a vector of per-component scales.
    pub fn whitening(&self) -> Vector6<f64> {
        self.variances.map(|v| 1.0 / v.sqrt())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::floored(self.variances * factor)
    }

    pub fn whiten(&self, e: &Tangent) -> Tangent {
        e.component_mul(&self.whitening())
    }
}

impl TryFrom<[f64; 6]> for DiagonalNoise {
    type Error = LieError;
    fn try_from(v: [f64; 6]) -> Result<Self, LieError> {
        Self::new(Vector6::from_row_slice(&v))
    }
}

impl From<DiagonalNoise> for [f64; 6] {
    fn from(n: DiagonalNoise) -> Self {
        let mut out = [0.0; 6];
        out.copy_from_slice(n.variances.as_slice());
        out
    }
}

/// `Σ_j e_j² / σ_j²`.
pub fn mahalanobis_sq(e: &Tangent, noise: &DiagonalNoise) -> f64 {
    e.iter()
        .zip(noise.variances.iter())
        .map(|(ej, var)| ej * ej / var)
        .sum()
}

/// Chordal mean: arithmetic mean of translations and the principal
/// eigenvector of `Σ q qᵀ` for the rotation.
pub fn mean_pose(poses: &[Pose]) -> Result<Pose, LieError> {
    if poses.is_empty() {
        return Err(LieError::EmptyMean);
    }
    if poses.len() == 1 {
        return Ok(poses[0]);
    }
    let n = poses.len() as f64;
    let translation = poses
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.translation)
        / n;
    let mut scatter = Matrix4::<f64>::zeros();
    for p in poses {
        let [w, x, y, z] = p.wxyz();
        let q = nalgebra::Vector4::new(w, x, y, z);
        scatter += q * q.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let (best, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        });
    let q = eig.eigenvectors.column(best);
    Ok(Pose::from_wxyz(q[0], q[1], q[2], q[3], translation))
}
