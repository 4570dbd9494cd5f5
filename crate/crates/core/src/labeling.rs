//! Hybrid pseudo-labeling from optimized object maps.
//!
//! For every frame and object the optimized object-to-camera pose
//! `x̂_t⁻¹ ℓ̂_j` competes with the raw inlier measurement (if any) under a
//! pluggable [`Scorer`]; the winner is kept only if it clears its own
//! threshold. Labels carry the projected cuboid keypoints.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{FactorId, PoseGraph, VariableKey, VariableKind};
use crate::liegroup::Pose;
use crate::solvers::SolveReport;

pub const KEYPOINTS: usize = 9;

/// Pixel scale of the geometric scorer.
pub const DEFAULT_SCORE_SCALE_PX: f64 = 20.0;

/// Largest measurement outlier fraction for which a sequence is labeled.
pub const DEFAULT_MAX_OUTLIER_RATE: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("keypoint {index} has non-positive depth {depth}")]
    BehindCamera { index: usize, depth: f64 },
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("invalid thresholds: s_pgo ({s_pgo}) must exceed s_in ({s_in})")]
    Thresholds { s_pgo: f64, s_in: f64 },
    #[error("invalid cuboid dimensions for object {0}")]
    Cuboid(usize),
    #[error("no cuboid model for object {0}")]
    MissingModel(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), LabelError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(LabelError::Intrinsics("focal lengths must be positive".into()));
        }
        let inside = (0.0..=self.width as f64).contains(&self.cx) && (0.0..=self.height as f64).contains(&self.cy);
        if !inside {
            return Err(LabelError::Intrinsics("principal point outside the image".into()));
        }
        Ok(())
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

/// Axis-aligned object box: 8 corners then the centroid, in the object frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuboidModel {
    pub object: usize,
    /// Box extents along x, y, z (m).
    pub dimensions: [f64; 3],
}

impl CuboidModel {
    pub fn new(object: usize, dimensions: [f64; 3]) -> Result<Self, LabelError> {
        if dimensions.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(LabelError::Cuboid(object));
        }
        Ok(Self { object, dimensions })
    }

    pub fn keypoints(&self) -> [Vector3<f64>; KEYPOINTS] {
        let [dx, dy, dz] = self.dimensions.map(|d| 0.5 * d);
        let mut out = [Vector3::zeros(); KEYPOINTS];
        for (i, p) in out.iter_mut().take(8).enumerate() {
            let sx = if i & 1 == 0 { -dx } else { dx };
            let sy = if i & 2 == 0 { -dy } else { dy };
            let sz = if i & 4 == 0 { -dz } else { dz };
            *p = Vector3::new(sx, sy, sz);
        }
        out
    }
}

pub type Keypoints = [[f64; 2]; KEYPOINTS];

/// Pinhole projection of the cuboid keypoints for an object-in-camera pose.
pub fn project_cuboid(
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    model: &CuboidModel,
) -> Result<Keypoints, LabelError> {
    let mut out = [[0.0; 2]; KEYPOINTS];
    for (index, (p, px)) in model.keypoints().iter().zip(out.iter_mut()).enumerate() {
        let c = pose.transform_point(p);
        if !(c.z > 0.0) {
            return Err(LabelError::BehindCamera { index, depth: c.z });
        }
        *px = [
            intrinsics.fx * c.x / c.z + intrinsics.cx,
            intrinsics.fy * c.y / c.z + intrinsics.cy,
        ];
    }
    Ok(out)
}

fn mean_pixel_distance(a: &Keypoints, b: &Keypoints) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .sum::<f64>()
        / KEYPOINTS as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Inlier,
    PgoEasy,
    PgoHard,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::Inlier => "inlier",
            LabelSource::PgoEasy => "pgo_easy",
            LabelSource::PgoHard => "pgo_hard",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    pub frame: usize,
    pub object: usize,
    /// Object pose in the camera frame.
    pub pose: Pose,
    pub keypoints: Keypoints,
    pub source: LabelSource,
    pub score: f64,
}

/// Visual-consistency score of an object-in-camera pose, in `[0, 1]`.
pub trait Scorer {
    fn score(&self, frame: usize, object: usize, pose: &Pose) -> f64;
}

impl<F: Fn(usize, usize, &Pose) -> f64> Scorer for F {
    fn score(&self, frame: usize, object: usize, pose: &Pose) -> f64 {
        self(frame, object, pose)
    }
}

/// `exp(−mean reprojection distance / scale)` against reference poses.
pub struct GeometricScorer<'a> {
    pub references: BTreeMap<(usize, usize), Pose>,
    pub intrinsics: CameraIntrinsics,
    pub models: &'a BTreeMap<usize, CuboidModel>,
    pub scale_px: f64,
}

impl<'a> GeometricScorer<'a> {
    pub fn new(
        references: BTreeMap<(usize, usize), Pose>,
        intrinsics: CameraIntrinsics,
        models: &'a BTreeMap<usize, CuboidModel>,
    ) -> Self {
        Self {
            references,
            intrinsics,
            models,
            scale_px: DEFAULT_SCORE_SCALE_PX,
        }
    }

    pub fn mean_reprojection_error(&self, frame: usize, object: usize, pose: &Pose) -> Option<f64> {
        let model = self.models.get(&object)?;
        let reference = self.references.get(&(frame, object))?;
        let expected = project_cuboid(reference, &self.intrinsics, model).ok()?;
        let got = project_cuboid(pose, &self.intrinsics, model).ok()?;
        Some(mean_pixel_distance(&got, &expected))
    }
}

impl Scorer for GeometricScorer<'_> {
    fn score(&self, frame: usize, object: usize, pose: &Pose) -> f64 {
        match self.mean_reprojection_error(frame, object, pose) {
            Some(err) => (-err / self.scale_px).exp(),
            None => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub s_pgo: f64,
    pub s_in: f64,
}

impl Thresholds {
    pub fn new(s_pgo: f64, s_in: f64) -> Result<Self, LabelError> {
        if !(s_pgo > s_in) || !(0.0..=1.0).contains(&s_pgo) || !(0.0..=1.0).contains(&s_in) {
            return Err(LabelError::Thresholds { s_pgo, s_in });
        }
        Ok(Self { s_pgo, s_in })
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { s_pgo: 0.9, s_in: 0.3 }
    }
}

/// Per-object thresholds used when none are configured: objects 0, 1, 2.
pub fn default_object_thresholds() -> BTreeMap<usize, Thresholds> {
    BTreeMap::from([
        (0, Thresholds { s_pgo: 0.9, s_in: 0.3 }),
        (1, Thresholds { s_pgo: 0.8, s_in: 0.3 }),
        (2, Thresholds { s_pgo: 0.5, s_in: 0.2 }),
    ])
}

/// A scored candidate pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub pose: Pose,
    pub score: f64,
}

/// Picks between the inlier prediction and the optimized pose.
///
/// The higher scorer wins if it clears its own threshold (ties go to the
/// inlier). With `fallback`, a losing candidate that clears its threshold is
/// used when the winner does not.
pub fn hybrid_select(
    inlier: Option<Candidate>,
    pgo: Candidate,
    thresholds: Thresholds,
    fallback: bool,
) -> Option<(Candidate, LabelSource)> {
    let pgo_ok = pgo.score > thresholds.s_pgo;
    let Some(inlier) = inlier else {
        return pgo_ok.then_some((pgo, LabelSource::PgoHard));
    };
    let inlier_ok = inlier.score > thresholds.s_in;
    if pgo.score > inlier.score {
        if pgo_ok {
            Some((pgo, LabelSource::PgoEasy))
        } else if fallback && inlier_ok {
            Some((inlier, LabelSource::Inlier))
        } else {
            None
        }
    } else if inlier_ok {
        Some((inlier, LabelSource::Inlier))
    } else if fallback && pgo_ok {
        Some((pgo, LabelSource::PgoEasy))
    } else {
        None
    }
}

/// Factor ids flagged as inliers in the report.
pub fn extract_inliers(report: &SolveReport) -> BTreeSet<FactorId> {
    report.inliers().collect()
}

/// `x̂_t⁻¹ ℓ̂_j` from the report's estimates.
pub fn optimized_object_pose(report: &SolveReport, frame: usize, object: usize) -> Option<Pose> {
    let x = report.estimates.get(&VariableKey::camera(frame))?;
    let l = report.estimates.get(&VariableKey::landmark(object))?;
    Some(x.between(l))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelOptions {
    pub thresholds: BTreeMap<usize, Thresholds>,
    pub default_thresholds: Thresholds,
    pub fallback: bool,
    /// Skip the whole sequence when more measurements than this are
    /// outliers (typically [`DEFAULT_MAX_OUTLIER_RATE`]).
    pub max_outlier_rate: Option<f64>,
}

impl Default for LabelOptions {
    fn default() -> Self {
        Self {
            thresholds: default_object_thresholds(),
            default_thresholds: Thresholds::default(),
            fallback: false,
            max_outlier_rate: None,
        }
    }
}

impl LabelOptions {
    /// Same thresholds for every object.
    pub fn uniform(thresholds: Thresholds) -> Self {
        Self {
            thresholds: BTreeMap::new(),
            default_thresholds: thresholds,
            ..Self::default()
        }
    }
}

impl LabelOptions {
    pub fn thresholds_for(&self, object: usize) -> Thresholds {
        self.thresholds.get(&object).copied().unwrap_or(self.default_thresholds)
    }
}

/// Result of labeling one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRun {
    pub labels: Vec<PseudoLabel>,
    pub outlier_rate: f64,
    /// True when the sequence was skipped for its outlier rate.
    pub skipped: bool,
}

/// Runs hybrid labeling over every (frame, object) pair of the solved graph.
pub fn generate_labels(
    graph: &PoseGraph,
    report: &SolveReport,
    models: &BTreeMap<usize, CuboidModel>,
    intrinsics: &CameraIntrinsics,
    scorer: &dyn Scorer,
    options: &LabelOptions,
) -> Result<LabelRun, LabelError> {
    intrinsics.validate()?;
    let inliers = extract_inliers(report);
    let total = graph.measurements().len();
    let outlier_rate = if total == 0 {
        0.0
    } else {
        (total - inliers.len().min(total)) as f64 / total as f64
    };
    if options.max_outlier_rate.is_some_and(|max| outlier_rate > max) {
        return Ok(LabelRun {
            labels: Vec::new(),
            outlier_rate,
            skipped: true,
        });
    }

    let mut inlier_candidates: BTreeMap<(usize, usize), Vec<Pose>> = BTreeMap::new();
    for f in graph.measurements().iter().filter(|f| inliers.contains(&f.id)) {
        inlier_candidates
            .entry((f.camera.index, f.landmark.index))
            .or_default()
            .push(f.measurement);
    }

    let frames: Vec<usize> = report
        .estimates
        .keys()
        .filter(|k| k.kind == VariableKind::Camera)
        .map(|k| k.index)
        .collect();
    let objects: Vec<usize> = report
        .estimates
        .keys()
        .filter(|k| k.kind == VariableKind::Landmark)
        .map(|k| k.index)
        .collect();

    let mut labels = Vec::new();
    for &frame in &frames {
        for &object in &objects {
            let model = models.get(&object).ok_or(LabelError::MissingModel(object))?;
            let Some(pgo_pose) = optimized_object_pose(report, frame, object) else {
                continue;
            };
            if project_cuboid(&pgo_pose, intrinsics, model).is_err() {
                continue;
            }
            let pgo = Candidate {
                pose: pgo_pose,
                score: scorer.score(frame, object, &pgo_pose),
            };
            let inlier = inlier_candidates
                .get(&(frame, object))
                .into_iter()
                .flatten()
                .filter(|p| project_cuboid(p, intrinsics, model).is_ok())
                .map(|p| Candidate {
                    pose: *p,
                    score: scorer.score(frame, object, p),
                })
                .max_by(|a, b| a.score.total_cmp(&b.score));
            let Some((chosen, source)) =
                hybrid_select(inlier, pgo, options.thresholds_for(object), options.fallback)
            else {
                continue;
            };
            labels.push(PseudoLabel {
                frame,
                object,
                pose: chosen.pose,
                keypoints: project_cuboid(&chosen.pose, intrinsics, model)?,
                source,
                score: chosen.score.clamp(0.0, 1.0),
            });
        }
    }
    Ok(LabelRun {
        labels,
        outlier_rate,
        skipped: false,
    })
}
