//! Text formats: extended g2o graphs, TUM trajectories, JSON reports,
//! ground-truth sidecars, pseudo-label JSONL and model/intrinsics configs.
//!
//! Graph files follow g2o's `EDGE_SE3:QUAT` conventions, including the
//! translation-first ordering of the information matrix. Object landmarks
//! use a separate `VERTEX_OBJ:QUAT` tag. Camera `t` is written with id `t`
//! and landmark `j` with id `T + j`; on reading, cameras are indexed by id
//! rank and landmarks by their offset past the largest camera id.

use std::collections::BTreeMap;

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{EvalError, Trajectory};
use crate::graph::{
    FactorId, GraphError, PoseGraph, Values, VariableKey, VariableKind, GAUGE_PRIOR_VARIANCE,
};
use crate::labeling::{CuboidModel, LabelError, LabelSource, PseudoLabel, KEYPOINTS};
use crate::liegroup::{DiagonalNoise, Pose};
use crate::sim::GroundTruth;
use crate::solvers::{SolveReport, Termination};

pub const SIGNIFICANT_DIGITS: usize = 12;

const TAG_CAMERA: &str = "VERTEX_SE3:QUAT";
const TAG_OBJECT: &str = "VERTEX_OBJ:QUAT";
const TAG_EDGE: &str = "EDGE_SE3:QUAT";
const TAG_FIX: &str = "FIX";

/// Positions of the diagonal in a row-major upper-triangular 6×6 matrix.
const INFO_DIAGONAL: [usize; 6] = [0, 6, 11, 15, 18, 20];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

fn parse_error(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        message: message.into(),
    }
}

/// Rounds to 12 significant digits and prints the shortest exact form.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses");
    format!("{rounded}")
}

fn join_floats(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(format_float).collect::<Vec<_>>().join(" ")
}

/// `x y z qx qy qz qw`.
fn pose_fields(pose: &Pose) -> [f64; 7] {
    let t = pose.translation();
    let [w, x, y, z] = pose.wxyz();
    [t.x, t.y, t.z, x, y, z, w]
}

fn pose_from_fields(f: &[f64]) -> Option<Pose> {
    let q = Vector3::new(f[3], f[4], f[5]);
    if q.norm() == 0.0 && f[6] == 0.0 {
        return None;
    }
    Some(Pose::from_wxyz(f[6], f[3], f[4], f[5], Vector3::new(f[0], f[1], f[2])))
}

fn parse_floats(tokens: &[&str], line: usize) -> Result<Vec<f64>, IoError> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_error(line, format!("bad number `{t}`")))
        })
        .collect()
}

fn parse_id(token: &str, line: usize) -> Result<usize, IoError> {
    token
        .parse()
        .map_err(|_| parse_error(line, format!("bad id `{token}`")))
}

/// Information entries are in g2o order `[ρ; ω]`; noise is `[ω; ρ]`.
fn noise_from_information(info: &[f64], line: usize) -> Result<DiagonalNoise, IoError> {
    for (i, v) in info.iter().enumerate() {
        if !INFO_DIAGONAL.contains(&i) && *v != 0.0 {
            return Err(parse_error(line, "non-diagonal information matrices are not supported"));
        }
    }
    let diag: Vec<f64> = INFO_DIAGONAL.iter().map(|&i| info[i]).collect();
    if diag.iter().any(|v| !(*v > 0.0)) {
        return Err(parse_error(line, "information diagonal must be positive"));
    }
    let variances = Vector6::new(
        1.0 / diag[3],
        1.0 / diag[4],
        1.0 / diag[5],
        1.0 / diag[0],
        1.0 / diag[1],
        1.0 / diag[2],
    );
    DiagonalNoise::new(variances).map_err(|e| parse_error(line, e.to_string()))
}

fn information_fields(noise: &DiagonalNoise) -> [f64; 21] {
    let v = noise.variances();
    let diag = [v[3], v[4], v[5], v[0], v[1], v[2]].map(|x| 1.0 / x);
    let mut out = [0.0; 21];
    for (slot, d) in INFO_DIAGONAL.iter().zip(diag) {
        out[*slot] = d;
    }
    out
}

struct Edge {
    line: usize,
    from: usize,
    to: usize,
    measurement: Pose,
    noise: DiagonalNoise,
}

pub fn parse_graph(text: &str) -> Result<PoseGraph, IoError> {
    let mut cameras: BTreeMap<usize, (usize, Pose)> = BTreeMap::new();
    let mut objects: BTreeMap<usize, (usize, Pose)> = BTreeMap::new();
    let mut edges = Vec::new();
    let mut fixed = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        let Some((&tag, rest)) = tokens.split_first() else {
            continue;
        };
        if tag.starts_with('#') {
            continue;
        }
        match tag {
            TAG_CAMERA | TAG_OBJECT => {
                if rest.len() != 8 {
                    return Err(parse_error(line, format!("{tag} expects 8 fields, got {}", rest.len())));
                }
                let id = parse_id(rest[0], line)?;
                let f = parse_floats(&rest[1..], line)?;
                let pose = pose_from_fields(&f).ok_or_else(|| parse_error(line, "zero quaternion"))?;
                if cameras.contains_key(&id) || objects.contains_key(&id) {
                    return Err(parse_error(line, format!("vertex {id} declared twice")));
                }
                let table = if tag == TAG_CAMERA { &mut cameras } else { &mut objects };
                table.insert(id, (line, pose));
            }
            TAG_EDGE => {
                if rest.len() != 30 {
                    return Err(parse_error(line, format!("{tag} expects 30 fields, got {}", rest.len())));
                }
                let from = parse_id(rest[0], line)?;
                let to = parse_id(rest[1], line)?;
                let f = parse_floats(&rest[2..], line)?;
                let measurement = pose_from_fields(&f[..7]).ok_or_else(|| parse_error(line, "zero quaternion"))?;
                let noise = noise_from_information(&f[7..], line)?;
                edges.push(Edge {
                    line,
                    from,
                    to,
                    measurement,
                    noise,
                });
            }
            TAG_FIX => {
                if rest.len() != 1 {
                    return Err(parse_error(line, "FIX expects one vertex id"));
                }
                if fixed.is_some() {
                    return Err(parse_error(line, "only one FIX line is supported"));
                }
                fixed = Some((line, parse_id(rest[0], line)?));
            }
            other => return Err(parse_error(line, format!("unknown record `{other}`"))),
        }
    }

    let mut keys: BTreeMap<usize, VariableKey> = BTreeMap::new();
    let mut graph = PoseGraph::new();
    for (rank, (&id, &(_, pose))) in cameras.iter().enumerate() {
        keys.insert(id, VariableKey::camera(rank));
        graph.add_camera(rank, pose)?;
    }
    let base = cameras.keys().next_back().map_or(0, |m| m + 1);
    for (&id, &(line, pose)) in &objects {
        if id < base {
            return Err(parse_error(line, format!("object id {id} must exceed every camera id")));
        }
        keys.insert(id, VariableKey::landmark(id - base));
        graph.add_landmark(id - base, pose)?;
    }

    let lookup = |id: usize, line: usize| {
        keys.get(&id)
            .copied()
            .ok_or_else(|| parse_error(line, format!("undeclared vertex {id}")))
    };
    for e in &edges {
        let (a, b) = (lookup(e.from, e.line)?, lookup(e.to, e.line)?);
        match (a.kind, b.kind) {
            (VariableKind::Camera, VariableKind::Camera) => {
                graph
                    .add_odometry(a.index, b.index, e.measurement, e.noise)
                    .map_err(|err| parse_error(e.line, err.to_string()))?;
            }
            (VariableKind::Camera, VariableKind::Landmark) => {
                graph
                    .add_measurement(a.index, b.index, e.measurement, e.noise)
                    .map_err(|err| parse_error(e.line, err.to_string()))?;
            }
            _ => return Err(parse_error(e.line, "edges must start at a camera vertex")),
        }
    }

    match fixed {
        Some((line, id)) => {
            let key = lookup(id, line)?;
            let pose = graph.values()[&key];
            graph.set_prior(key, pose, DiagonalNoise::isotropic(GAUGE_PRIOR_VARIANCE))?;
        }
        None if graph.num_cameras() > 0 => graph.anchor_first_camera()?,
        None => {}
    }
    Ok(graph)
}

/// Graph text with the current variable values as vertex estimates.
pub fn write_graph(graph: &PoseGraph) -> String {
    let num_cameras = graph.num_cameras();
    let id_of = |key: &VariableKey| match key.kind {
        VariableKind::Camera => key.index,
        VariableKind::Landmark => num_cameras + key.index,
    };
    let mut out = String::new();
    for (key, pose) in graph.values() {
        let tag = match key.kind {
            VariableKind::Camera => TAG_CAMERA,
            VariableKind::Landmark => TAG_OBJECT,
        };
        out += &format!("{tag} {} {}\n", id_of(key), join_floats(pose_fields(pose)));
    }
    let edge = |from: usize, to: usize, m: &Pose, noise: &DiagonalNoise| {
        format!(
            "{TAG_EDGE} {from} {to} {} {}\n",
            join_floats(pose_fields(m)),
            join_floats(information_fields(noise))
        )
    };
    for f in graph.odometry() {
        out += &edge(f.from.index, f.to.index, &f.measurement, &f.noise);
    }
    for f in graph.measurements() {
        out += &edge(
            f.camera.index,
            num_cameras + f.landmark.index,
            &f.measurement,
            &f.noise,
        );
    }
    if let Some(prior) = graph.prior() {
        out += &format!("{TAG_FIX} {}\n", id_of(&prior.key));
    }
    out
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory, IoError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 8 {
            return Err(parse_error(line, format!("expected 8 fields, got {}", tokens.len())));
        }
        let f = parse_floats(&tokens, line)?;
        let pose = pose_from_fields(&f[1..]).ok_or_else(|| parse_error(line, "zero quaternion"))?;
        if entries.last().is_some_and(|(t, _)| f[0] <= *t) {
            return Err(parse_error(line, "timestamps must be strictly increasing"));
        }
        entries.push((f[0], pose));
    }
    Ok(Trajectory::new(entries)?)
}

pub fn write_trajectory(trajectory: &Trajectory) -> String {
    trajectory
        .entries()
        .iter()
        .map(|(t, pose)| format!("{} {}\n", format_float(*t), join_floats(pose_fields(pose))))
        .collect()
}

/// Camera poses in index order, timestamped by index.
pub fn camera_trajectory(values: &Values) -> Trajectory {
    Trajectory::from_poses(
        values
            .iter()
            .filter(|(k, _)| k.kind == VariableKind::Camera)
            .map(|(_, p)| *p),
    )
}

/// Landmark poses by index.
pub fn landmark_poses(values: &Values) -> BTreeMap<usize, Pose> {
    values
        .iter()
        .filter(|(k, _)| k.kind == VariableKind::Landmark)
        .map(|(k, p)| (k.index, *p))
        .collect()
}

/// JSON pose: quaternion `w, x, y, z` and translation `x, y, z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub quat: [f64; 4],
    pub trans: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(pose: &Pose) -> Self {
        let t = pose.translation();
        Self {
            quat: pose.wxyz(),
            trans: [t.x, t.y, t.z],
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<Pose, IoError> {
        let [w, x, y, z] = self.quat;
        if [w, x, y, z].iter().all(|v| *v == 0.0) {
            return Err(IoError::Invalid("zero quaternion".into()));
        }
        Ok(Pose::from_wxyz(w, x, y, z, Vector3::from(self.trans)))
    }
}

/// Ground truth not carried by the TUM camera trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub landmarks: BTreeMap<usize, PoseRecord>,
    /// One flag per measurement, true for injected outliers.
    pub outlier_flags: Vec<bool>,
}

impl TruthFile {
    pub fn from_truth(truth: &GroundTruth) -> Self {
        Self {
            landmarks: truth.landmarks.iter().enumerate().map(|(j, p)| (j, p.into())).collect(),
            outlier_flags: truth.outlier_flags.clone(),
        }
    }

    pub fn landmark_poses(&self) -> Result<BTreeMap<usize, Pose>, IoError> {
        self.landmarks.iter().map(|(j, r)| Ok((*j, r.to_pose()?))).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRecord {
    pub id: usize,
    pub camera: usize,
    pub landmark: usize,
    pub inlier: bool,
    /// Final covariance diagonal `[ω; ρ]`, when the method tunes covariances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variances: Option<[f64; 6]>,
}

/// Serialized solve result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub method: String,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub loss_trace: Vec<f64>,
    pub monotonicity_violations: Vec<usize>,
    pub cameras: BTreeMap<usize, PoseRecord>,
    pub landmarks: BTreeMap<usize, PoseRecord>,
    pub factors: Vec<FactorRecord>,
}

impl ReportFile {
    pub fn new(report: &SolveReport, graph: &PoseGraph) -> Self {
        let records = |kind| {
            report
                .estimates
                .iter()
                .filter(|(k, _)| k.kind == kind)
                .map(|(k, p)| (k.index, p.into()))
                .collect()
        };
        Self {
            method: report.method.clone(),
            termination: report.termination,
            failure: report.failure.clone(),
            initial_loss: report.initial_loss,
            final_loss: report.final_loss(),
            iterations: report.iterations(),
            loss_trace: report.loss_trace.clone(),
            monotonicity_violations: report.monotonicity_violations.clone(),
            cameras: records(VariableKind::Camera),
            landmarks: records(VariableKind::Landmark),
            factors: graph
                .measurements()
                .iter()
                .map(|f| FactorRecord {
                    id: f.id.0,
                    camera: f.camera.index,
                    landmark: f.landmark.index,
                    inlier: report.inlier_flags.get(&f.id).copied().unwrap_or(true),
                    variances: report
                        .final_covariances
                        .get(&f.id)
                        .map(|n| (*n.variances()).into()),
                })
                .collect(),
        }
    }

    /// Rebuilds the report; per-iteration estimates are not stored.
    pub fn to_report(&self) -> Result<SolveReport, IoError> {
        let mut estimates = Values::new();
        for (i, r) in &self.cameras {
            estimates.insert(VariableKey::camera(*i), r.to_pose()?);
        }
        for (j, r) in &self.landmarks {
            estimates.insert(VariableKey::landmark(*j), r.to_pose()?);
        }
        let mut final_covariances = BTreeMap::new();
        for f in &self.factors {
            if let Some(v) = f.variances {
                let noise = DiagonalNoise::new(Vector6::from(v)).map_err(|e| IoError::Invalid(e.to_string()))?;
                final_covariances.insert(FactorId(f.id), noise);
            }
        }
        Ok(SolveReport {
            method: self.method.clone(),
            estimates,
            initial_loss: self.initial_loss,
            loss_trace: self.loss_trace.clone(),
            iterates: Vec::new(),
            inlier_flags: self.factors.iter().map(|f| (FactorId(f.id), f.inlier)).collect(),
            final_covariances,
            termination: self.termination,
            failure: self.failure.clone(),
            monotonicity_violations: self.monotonicity_violations.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LabelRecord {
    frame: usize,
    object: usize,
    pose: PoseRecord,
    keypoints: Vec<[f64; 2]>,
    source: LabelSource,
    score: f64,
}

pub fn write_labels(labels: &[PseudoLabel]) -> Result<String, IoError> {
    let mut out = String::new();
    for l in labels {
        let record = LabelRecord {
            frame: l.frame,
            object: l.object,
            pose: (&l.pose).into(),
            keypoints: l.keypoints.to_vec(),
            source: l.source,
            score: l.score,
        };
        out += &serde_json::to_string(&record)?;
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_labels(text: &str) -> Result<Vec<PseudoLabel>, IoError> {
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let r: LabelRecord = serde_json::from_str(raw).map_err(|e| parse_error(line, e.to_string()))?;
        let keypoints: [[f64; 2]; KEYPOINTS] = r
            .keypoints
            .try_into()
            .map_err(|_| parse_error(line, format!("expected {KEYPOINTS} keypoints")))?;
        if !(0.0..=1.0).contains(&r.score) {
            return Err(parse_error(line, "score outside [0, 1]"));
        }
        labels.push(PseudoLabel {
            frame: r.frame,
            object: r.object,
            pose: r.pose.to_pose().map_err(|e| parse_error(line, e.to_string()))?,
            keypoints,
            source: r.source,
            score: r.score,
        });
    }
    Ok(labels)
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    dimensions: [f64; 3],
}

/// Object registry `{"<id>": {"dimensions": [dx, dy, dz]}}`.
pub fn parse_models(text: &str) -> Result<BTreeMap<usize, CuboidModel>, IoError> {
    let raw: BTreeMap<usize, ModelRecord> = serde_json::from_str(text)?;
    raw.into_iter()
        .map(|(id, r)| Ok((id, CuboidModel::new(id, r.dimensions)?)))
        .collect()
}

pub fn write_models(models: &BTreeMap<usize, CuboidModel>) -> Result<String, IoError> {
    let raw: BTreeMap<usize, ModelRecord> = models
        .iter()
        .map(|(id, m)| (*id, ModelRecord { dimensions: m.dimensions }))
        .collect();
    Ok(serde_json::to_string_pretty(&raw)?)
}
