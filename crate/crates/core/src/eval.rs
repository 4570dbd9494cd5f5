//! Trajectory, object and pseudo-label error metrics.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeling::{project_cuboid, CameraIntrinsics, CuboidModel, PseudoLabel};
use crate::liegroup::Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("timestamps differ at row {0}")]
    IndexMismatch(usize),
    #[error("trajectory indices must be strictly increasing (row {0})")]
    NotIncreasing(usize),
    #[error("empty input")]
    Empty,
    #[error("no ground truth for frame {frame}, object {object}")]
    MissingTruth { frame: usize, object: usize },
    #[error("label for frame {frame}, object {object} cannot be projected")]
    Projection { frame: usize, object: usize },
}

/// Timestamped poses with strictly increasing stamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        if let Some(i) = entries.windows(2).position(|w| !(w[1].0 > w[0].0)) {
            return Err(EvalError::NotIncreasing(i + 1));
        }
        Ok(Self { entries })
    }

    /// Stamps `0, 1, 2, …`.
    pub fn from_poses(poses: impl IntoIterator<Item = Pose>) -> Self {
        Self {
            entries: poses.into_iter().enumerate().map(|(i, p)| (i as f64, p)).collect(),
        }
    }

    pub fn entries(&self) -> &[(f64, Pose)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.entries.iter().map(|(_, p)| p)
    }
}

/// Accuracy at one error threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub accuracy: f64,
}

/// Least-squares rotation and translation taking `src` onto `dst`.
pub fn align_points(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - cd) * (s - cs).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * v_t;
    (r, cd - r * cs)
}

/// Translation RMSE, optionally after a best-fit rigid alignment of `est` onto `gt`.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, align: bool) -> Result<f64, EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch(est.len(), gt.len()));
    }
    if est.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(i) = est
        .entries
        .iter()
        .zip(&gt.entries)
        .position(|(a, b)| (a.0 - b.0).abs() > 1e-6)
    {
        return Err(EvalError::IndexMismatch(i));
    }
    let src: Vec<Vector3<f64>> = est.poses().map(|p| *p.translation()).collect();
    let dst: Vec<Vector3<f64>> = gt.poses().map(|p| *p.translation()).collect();
    let (r, t) = if align {
        align_points(&src, &dst)
    } else {
        (Matrix3::identity(), Vector3::zeros())
    };
    let sum: f64 = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (r * s + t - d).norm_squared())
        .sum();
    Ok((sum / src.len() as f64).sqrt())
}

/// `(translation distance, geodesic rotation angle)`.
pub fn object_pose_error(est: &Pose, gt: &Pose) -> (f64, f64) {
    let trans = (est.translation() - gt.translation()).norm();
    (trans, est.between(gt).angle())
}

/// Mean displacement of model points between the two poses.
pub fn add_error(points: &[Vector3<f64>], est: &Pose, gt: &Pose) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points
        .iter()
        .map(|p| (est.transform_point(p) - gt.transform_point(p)).norm())
        .sum::<f64>()
        / points.len() as f64
}

/// Accuracy `P(error ≤ threshold)` at `samples` evenly spaced thresholds in `[0, max]`.
pub fn accuracy_curve(errors: &[f64], max_threshold: f64, samples: usize) -> Vec<CurvePoint> {
    let n = errors.len().max(1) as f64;
    (0..samples)
        .map(|i| {
            let threshold = max_threshold * i as f64 / (samples - 1).max(1) as f64;
            let hits = errors.iter().filter(|e| **e <= threshold).count();
            CurvePoint {
                threshold,
                accuracy: hits as f64 / n,
            }
        })
        .collect()
}

/// Trapezoidal area under an accuracy curve over `[0, max]`, in percent.
pub fn auc(curve: &[CurvePoint], max_threshold: f64) -> f64 {
    let area: f64 = curve
        .windows(2)
        .map(|w| {
            let lo = w[0].threshold.clamp(0.0, max_threshold);
            let hi = w[1].threshold.clamp(0.0, max_threshold);
            0.5 * (w[0].accuracy + w[1].accuracy) * (hi - lo)
        })
        .sum();
    100.0 * area / max_threshold
}

/// Per-label mean keypoint distance (px) and the median over labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelErrors {
    pub per_label: Vec<f64>,
    pub median: f64,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Mean pixel distance over the nine cuboid keypoints between each label and
/// the projection of its true object-in-camera pose.
pub fn label_pixel_error<'a>(
    labels: &[PseudoLabel],
    truth: impl Fn(usize, usize) -> Option<Pose>,
    intrinsics: &CameraIntrinsics,
    model: impl Fn(usize) -> Option<&'a CuboidModel>,
) -> Result<LabelErrors, EvalError> {
    let mut per_label = Vec::with_capacity(labels.len());
    for label in labels {
        let (frame, object) = (label.frame, label.object);
        let gt = truth(frame, object).ok_or(EvalError::MissingTruth { frame, object })?;
        let cuboid = model(object).ok_or(EvalError::MissingTruth { frame, object })?;
        let expected =
            project_cuboid(&gt, intrinsics, cuboid).map_err(|_| EvalError::Projection { frame, object })?;
        let mean = label
            .keypoints
            .iter()
            .zip(&expected)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .sum::<f64>()
            / expected.len() as f64;
        per_label.push(mean);
    }
    let median = median(&per_label).ok_or(EvalError::Empty)?;
    Ok(LabelErrors { per_label, median })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::{exp, Tangent};
    use std::f64::consts::FRAC_PI_2;

    fn poses(n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| {
                let f = i as f64;
                exp(&Tangent::from_row_slice(&[0.1 * f, -0.05 * f, 0.2, f, 0.5 * f * f, -f]))
            })
            .collect()
    }

    #[test]
    fn ate_cases() {
        let gt = Trajectory::from_poses(poses(10));
        assert_eq!(ate_rmse(&gt, &gt, false).unwrap(), 0.0);

        let t = exp(&Tangent::from_row_slice(&[0.3, -0.2, 1.0, 2.0, -1.0, 0.5]));
        let moved = Trajectory::from_poses(poses(10).iter().map(|p| t.compose(p)));
        assert!(ate_rmse(&moved, &gt, true).unwrap() < 1e-9);
        assert!(ate_rmse(&moved, &gt, false).unwrap() > 1.0);

        let offset = Pose::from_translation(Vector3::new(0.0, 0.1, 0.0));
        let shifted = Trajectory::from_poses(poses(10).iter().map(|p| offset.compose(p)));
        assert!((ate_rmse(&shifted, &gt, false).unwrap() - 0.1).abs() < 1e-12);
        assert!(ate_rmse(&shifted, &gt, true).unwrap() <= 0.1 + 1e-9);
    }

    #[test]
    fn ate_errors() {
        let a = Trajectory::from_poses(poses(3));
        let b = Trajectory::from_poses(poses(4));
        assert_eq!(ate_rmse(&a, &b, false), Err(EvalError::LengthMismatch(3, 4)));
        assert!(Trajectory::new(vec![(1.0, Pose::identity()), (1.0, Pose::identity())]).is_err());
    }

    #[test]
    fn object_error_cases() {
        let p = poses(3)[2];
        let (t, r) = object_pose_error(&p, &p);
        assert!(t == 0.0 && r < 1e-15);
        let yaw = Pose::new(
            nalgebra::UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2),
            *p.translation(),
        );
        let (t, r) = object_pose_error(&Pose::from_translation(*p.translation()), &yaw);
        assert!(t < 1e-15 && (r - FRAC_PI_2).abs() < 1e-12);
        for w in poses(6).windows(2) {
            let [a0, a1, a2, a3] = w[0].wxyz();
            let [b0, b1, b2, b3] = w[1].wxyz();
            let dot = (a0 * b0 + a1 * b1 + a2 * b2 + a3 * b3).abs().min(1.0);
            assert!((object_pose_error(&w[0], &w[1]).1 - 2.0 * dot.acos()).abs() < 1e-9);
        }
    }

    #[test]
    fn add_cases() {
        let pts: Vec<Vector3<f64>> = (0..9).map(|i| Vector3::new(i as f64 * 0.1, -0.2, 0.05 * i as f64)).collect();
        let p = poses(4)[3];
        assert_eq!(add_error(&pts, &p, &p), 0.0);
        let d = Vector3::new(0.03, -0.04, 0.0);
        let shifted = Pose::from_translation(d).compose(&p);
        assert!((add_error(&pts, &shifted, &p) - 0.05).abs() < 1e-12);
        let q = poses(4)[1];
        let mut naive = 0.0;
        for x in &pts {
            let a = q.to_matrix() * x.push(1.0);
            let b = p.to_matrix() * x.push(1.0);
            naive += (a - b).norm();
        }
        assert!((add_error(&pts, &q, &p) - naive / 9.0).abs() < 1e-12);
    }

    #[test]
    fn auc_cases() {
        let ones: Vec<CurvePoint> = (0..11).map(|i| CurvePoint { threshold: i as f64 * 0.01, accuracy: 1.0 }).collect();
        assert!((auc(&ones, 0.1) - 100.0).abs() < 1e-9);
        let zeros: Vec<CurvePoint> = ones.iter().map(|p| CurvePoint { accuracy: 0.0, ..*p }).collect();
        assert_eq!(auc(&zeros, 0.1), 0.0);
        let step: Vec<CurvePoint> = (0..=200)
            .map(|i| {
                let threshold = i as f64 / 200.0;
                CurvePoint { threshold, accuracy: if threshold >= 0.5 { 1.0 } else { 0.0 } }
            })
            .collect();
        assert!((auc(&step, 1.0) - 50.0).abs() < 0.5);
    }

    #[test]
    fn median_cases() {
        let mut errs = vec![5.0; 9];
        errs.push(100.0);
        errs.push(5.0);
        assert_eq!(median(&errs), Some(5.0));
        assert_eq!(median(&[1.0, 3.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }
}
