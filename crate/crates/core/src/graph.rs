//! Factor graph over camera and object-landmark poses.
//!
//! Residuals use right composition: odometry `e_t = log(u_t⁻¹ x_{t−1}⁻¹ x_t)`,
//! object measurements `e_k = log(z_k⁻¹ x_t⁻¹ ℓ_j)`, and variables are
//! perturbed on the right, `x ← x ∘ exp(δ)`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liegroup::{mahalanobis_sq, se3_right_jacobian_inv, DiagonalNoise, Pose, Tangent};

/// Variance of the gauge prior placed on the first camera.
pub const GAUGE_PRIOR_VARIANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Camera,
    Landmark,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VariableKey {
    pub kind: VariableKind,
    pub index: usize,
}

impl VariableKey {
    pub fn camera(index: usize) -> Self {
        Self {
            kind: VariableKind::Camera,
            index,
        }
    }

    pub fn landmark(index: usize) -> Self {
        Self {
            kind: VariableKind::Landmark,
            index,
        }
    }
}

impl fmt::Display for VariableKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            VariableKind::Camera => write!(f, "x{}", self.index),
            VariableKind::Landmark => write!(f, "l{}", self.index),
        }
    }
}

/// Object-measurement factor id `k`, assigned in insertion order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactorId(pub usize);

impl fmt::Display for FactorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "z{}", self.0)
    }
}

/// Current estimate of every variable, ordered cameras first.
pub type Values = BTreeMap<VariableKey, Pose>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("variable {0} is not in the graph")]
    MissingVariable(VariableKey),
    #[error("variable {0} already exists")]
    DuplicateVariable(VariableKey),
    #[error("odometry must link consecutive cameras, got {from} -> {to}")]
    NonConsecutiveOdometry { from: VariableKey, to: VariableKey },
    #[error("expected a {expected:?} variable, got {got}")]
    WrongKind { expected: VariableKind, got: VariableKey },
    #[error("camera indices must be contiguous from 0; missing x{0}")]
    CameraGap(usize),
    #[error("graph has no gauge prior")]
    NoGauge,
    #[error("variable {0} is not connected to the first camera")]
    Disconnected(VariableKey),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryFactor {
    pub from: VariableKey,
    pub to: VariableKey,
    pub measurement: Pose,
    pub noise: DiagonalNoise,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandmarkFactor {
    pub id: FactorId,
    pub camera: VariableKey,
    pub landmark: VariableKey,
    /// Object pose in the camera frame.
    pub measurement: Pose,
    pub noise: DiagonalNoise,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorFactor {
    pub key: VariableKey,
    pub pose: Pose,
    pub noise: DiagonalNoise,
}

/// `λ′ = 1/√λ` of the covariance-regularized loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegularizationWeight(f64);

impl RegularizationWeight {
    pub fn new(lambda_prime: f64) -> Option<Self> {
        (lambda_prime > 0.0 && lambda_prime.is_finite()).then_some(Self(lambda_prime))
    }

    pub fn lambda_prime(&self) -> f64 {
        self.0
    }

    /// `λ = 1/λ′²`.
    pub fn lambda(&self) -> f64 {
        1.0 / (self.0 * self.0)
    }
}

impl Default for RegularizationWeight {
    fn default() -> Self {
        Self(10.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseGraph {
    values: Values,
    odometry: Vec<OdometryFactor>,
    measurements: Vec<LandmarkFactor>,
    prior: Option<PriorFactor>,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: VariableKey, pose: Pose) -> Result<(), GraphError> {
        if self.values.contains_key(&key) {
            return Err(GraphError::DuplicateVariable(key));
        }
        self.values.insert(key, pose);
        Ok(())
    }

    pub fn add_camera(&mut self, index: usize, pose: Pose) -> Result<(), GraphError> {
        self.insert(VariableKey::camera(index), pose)
    }

    pub fn add_landmark(&mut self, index: usize, pose: Pose) -> Result<(), GraphError> {
        self.insert(VariableKey::landmark(index), pose)
    }

    pub fn add_odometry(
        &mut self,
        from: usize,
        to: usize,
        measurement: Pose,
        noise: DiagonalNoise,
    ) -> Result<(), GraphError> {
        let (from, to) = (VariableKey::camera(from), VariableKey::camera(to));
        if from.index + 1 != to.index {
            return Err(GraphError::NonConsecutiveOdometry { from, to });
        }
        self.require(&from)?;
        self.require(&to)?;
        self.odometry.push(OdometryFactor {
            from,
            to,
            measurement,
            noise,
        });
        Ok(())
    }

    pub fn add_measurement(
        &mut self,
        camera: usize,
        landmark: usize,
        measurement: Pose,
        noise: DiagonalNoise,
    ) -> Result<FactorId, GraphError> {
        let (camera, landmark) = (VariableKey::camera(camera), VariableKey::landmark(landmark));
        self.require(&camera)?;
        self.require(&landmark)?;
        let id = FactorId(self.measurements.len());
        self.measurements.push(LandmarkFactor {
            id,
            camera,
            landmark,
            measurement,
            noise,
        });
        Ok(id)
    }

    pub fn set_prior(&mut self, key: VariableKey, pose: Pose, noise: DiagonalNoise) -> Result<(), GraphError> {
        self.require(&key)?;
        self.prior = Some(PriorFactor { key, pose, noise });
        Ok(())
    }

    /// Fixes the gauge with a tight prior on `x_0` at its current value.
    pub fn anchor_first_camera(&mut self) -> Result<(), GraphError> {
        let key = VariableKey::camera(0);
        let pose = *self.values.get(&key).ok_or(GraphError::MissingVariable(key))?;
        self.set_prior(key, pose, DiagonalNoise::isotropic(GAUGE_PRIOR_VARIANCE))
    }

    fn require(&self, key: &VariableKey) -> Result<(), GraphError> {
        if self.values.contains_key(key) {
            Ok(())
        } else {
            Err(GraphError::MissingVariable(*key))
        }
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Values {
        &mut self.values
    }

    pub fn set_values(&mut self, values: Values) {
        self.values = values;
    }

    pub fn pose(&self, key: &VariableKey) -> Option<&Pose> {
        self.values.get(key)
    }

    pub fn odometry(&self) -> &[OdometryFactor] {
        &self.odometry
    }

    pub fn measurements(&self) -> &[LandmarkFactor] {
        &self.measurements
    }

    pub fn measurement(&self, id: FactorId) -> Option<&LandmarkFactor> {
        self.measurements.get(id.0)
    }

    pub fn prior(&self) -> Option<&PriorFactor> {
        self.prior.as_ref()
    }

    pub fn set_measurement_noise(&mut self, id: FactorId, noise: DiagonalNoise) {
        self.measurements[id.0].noise = noise;
    }

    pub fn measurement_noises(&self) -> Vec<DiagonalNoise> {
        self.measurements.iter().map(|f| f.noise).collect()
    }

    pub fn num_cameras(&self) -> usize {
        self.values
            .keys()
            .filter(|k| k.kind == VariableKind::Camera)
            .count()
    }

    pub fn num_landmarks(&self) -> usize {
        self.values.len() - self.num_cameras()
    }

    /// Checks contiguous camera indices, a gauge prior and connectivity.
    pub fn validate(&self) -> Result<(), GraphError> {
        let cameras = self.num_cameras();
        if let Some(t) = (0..cameras).find(|t| !self.values.contains_key(&VariableKey::camera(*t))) {
            return Err(GraphError::CameraGap(t));
        }
        let prior = self.prior.as_ref().ok_or(GraphError::NoGauge)?;
        let mut adjacency: BTreeMap<VariableKey, Vec<VariableKey>> = BTreeMap::new();
        let edges = self
            .odometry
            .iter()
            .map(|f| (f.from, f.to))
            .chain(self.measurements.iter().map(|f| (f.camera, f.landmark)));
        for (a, b) in edges {
            adjacency.entry(a).or_default().push(b);
            adjacency.entry(b).or_default().push(a);
        }
        let mut seen = BTreeSet::from([prior.key]);
        let mut queue = VecDeque::from([prior.key]);
        while let Some(k) = queue.pop_front() {
            for n in adjacency.get(&k).into_iter().flatten() {
                if seen.insert(*n) {
                    queue.push_back(*n);
                }
            }
        }
        match self.values.keys().find(|k| !seen.contains(k)) {
            Some(k) => Err(GraphError::Disconnected(*k)),
            None => Ok(()),
        }
    }

    /// Copy of the graph without the given measurement factors; ids are reassigned.
    pub fn without_measurements(&self, drop: &BTreeSet<FactorId>) -> PoseGraph {
        let mut out = self.clone();
        out.measurements = self
            .measurements
            .iter()
            .filter(|f| !drop.contains(&f.id))
            .enumerate()
            .map(|(i, f)| LandmarkFactor { id: FactorId(i), ..*f })
            .collect();
        out
    }
}

fn lookup<'a>(values: &'a Values, key: &VariableKey) -> Result<&'a Pose, GraphError> {
    values.get(key).ok_or(GraphError::MissingVariable(*key))
}

/// `log(u_t⁻¹ ∘ x_{t−1}⁻¹ ∘ x_t)`.
pub fn residual_odometry(f: &OdometryFactor, values: &Values) -> Result<Tangent, GraphError> {
    let a = lookup(values, &f.from)?;
    let b = lookup(values, &f.to)?;
    Ok(f.measurement.between(&a.between(b)).log_principal())
}

/// `log(z_k⁻¹ ∘ x_t⁻¹ ∘ ℓ_j)`.
pub fn residual_landmark(f: &LandmarkFactor, values: &Values) -> Result<Tangent, GraphError> {
    let x = lookup(values, &f.camera)?;
    let l = lookup(values, &f.landmark)?;
    Ok(f.measurement.between(&x.between(l)).log_principal())
}

pub fn residual_prior(f: &PriorFactor, values: &Values) -> Result<Tangent, GraphError> {
    Ok(f.pose.between(lookup(values, &f.key)?).log_principal())
}

/// Loss of the odometry and prior factors alone.
pub fn odometry_loss(graph: &PoseGraph) -> Result<f64, GraphError> {
    let mut total = 0.0;
    for f in &graph.odometry {
        total += mahalanobis_sq(&residual_odometry(f, &graph.values)?, &f.noise);
    }
    if let Some(p) = &graph.prior {
        total += mahalanobis_sq(&residual_prior(p, &graph.values)?, &p.noise);
    }
    Ok(total)
}

/// Sum of squared Mahalanobis residuals over every factor at the current values.
pub fn graph_loss(graph: &PoseGraph) -> Result<f64, GraphError> {
    let mut total = odometry_loss(graph)?;
    for f in &graph.measurements {
        total += mahalanobis_sq(&residual_landmark(f, &graph.values)?, &f.noise);
    }
    Ok(total)
}

/// Data term plus `λ Σ_j σ²_j` for one measurement factor.
pub fn measurement_joint_loss(e: &Tangent, noise: &DiagonalNoise, lambda: f64) -> f64 {
    mahalanobis_sq(e, noise) + lambda * noise.variances().sum()
}

/// Loss recorded for factors whose contribution is held constant.
pub type FrozenLosses = BTreeMap<FactorId, f64>;

/// Covariance-regularized loss. Factors in `frozen` contribute their recorded value.
pub fn joint_loss(
    graph: &PoseGraph,
    weight: RegularizationWeight,
    frozen: &FrozenLosses,
) -> Result<f64, GraphError> {
    let lambda = weight.lambda();
    let mut total = odometry_loss(graph)?;
    for f in &graph.measurements {
        total += match frozen.get(&f.id) {
            Some(v) => *v,
            None => measurement_joint_loss(&residual_landmark(f, &graph.values)?, &f.noise, lambda),
        };
    }
    Ok(total)
}

/// Whitened residual and Jacobian blocks of one factor.
#[derive(Clone, Debug)]
pub struct FactorBlock {
    pub keys: Vec<VariableKey>,
    pub jacobians: Vec<Matrix6<f64>>,
    pub residual: Vector6<f64>,
}

/// Stacked per-factor linearization, `r(x ∘ exp(δ)) ≈ r + Σ J_i δ_i`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    /// Variable order used for the tangent-space layout.
    pub ordering: Vec<VariableKey>,
    pub blocks: Vec<FactorBlock>,
}

impl LinearSystem {
    pub fn slot(&self, key: &VariableKey) -> Option<usize> {
        self.ordering.binary_search(key).ok()
    }

    pub fn dim(&self) -> usize {
        6 * self.ordering.len()
    }

    /// Squared norm of the stacked whitened residual.
    pub fn loss(&self) -> f64 {
        self.blocks.iter().map(|b| b.residual.norm_squared()).sum()
    }
}

fn whiten_rows(noise: &DiagonalNoise, j: Matrix6<f64>) -> Matrix6<f64> {
    let w = noise.whitening();
    Matrix6::from_fn(|r, c| w[r] * j[(r, c)])
}

// For e = log(m⁻¹ a⁻¹ b): de/dδa = −Jr⁻¹(e)·Ad(b⁻¹a), de/dδb = Jr⁻¹(e).
fn between_jacobians(a: &Pose, b: &Pose, e: &Tangent) -> (Matrix6<f64>, Matrix6<f64>) {
    let jr_inv = se3_right_jacobian_inv(e);
    let ja = -jr_inv * b.between(a).adjoint();
    (ja, jr_inv)
}

pub fn linearize(graph: &PoseGraph) -> Result<LinearSystem, GraphError> {
    let values = &graph.values;
    let mut blocks = Vec::with_capacity(graph.odometry.len() + graph.measurements.len() + 1);
    if let Some(p) = &graph.prior {
        let e = residual_prior(p, values)?;
        blocks.push(FactorBlock {
            keys: vec![p.key],
            jacobians: vec![whiten_rows(&p.noise, se3_right_jacobian_inv(&e))],
            residual: p.noise.whiten(&e),
        });
    }
    for f in &graph.odometry {
        let e = residual_odometry(f, values)?;
        let (ja, jb) = between_jacobians(lookup(values, &f.from)?, lookup(values, &f.to)?, &e);
        blocks.push(FactorBlock {
            keys: vec![f.from, f.to],
            jacobians: vec![whiten_rows(&f.noise, ja), whiten_rows(&f.noise, jb)],
            residual: f.noise.whiten(&e),
        });
    }
    for f in &graph.measurements {
        let e = residual_landmark(f, values)?;
        let (ja, jb) = between_jacobians(lookup(values, &f.camera)?, lookup(values, &f.landmark)?, &e);
        blocks.push(FactorBlock {
            keys: vec![f.camera, f.landmark],
            jacobians: vec![whiten_rows(&f.noise, ja), whiten_rows(&f.noise, jb)],
            residual: f.noise.whiten(&e),
        });
    }
    Ok(LinearSystem {
        ordering: values.keys().copied().collect(),
        blocks,
    })
}

/// Applies a stacked tangent update to every variable.
pub fn retract_all(values: &Values, ordering: &[VariableKey], delta: &nalgebra::DVector<f64>) -> Values {
    ordering
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let d = Tangent::from_iterator(delta.rows(6 * i, 6).iter().copied());
            (*k, values[k].retract(&d))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::exp;
    use nalgebra::Matrix4;

    fn t6(v: [f64; 6]) -> Tangent {
        Tangent::from_row_slice(&v)
    }

    fn small_graph() -> PoseGraph {
        let mut g = PoseGraph::new();
        let x0 = Pose::identity();
        let x1 = exp(&t6([0.1, -0.2, 0.3, 1.0, 0.5, -0.2]));
        let l0 = exp(&t6([0.4, 0.1, -0.6, 2.0, 1.0, 0.5]));
        g.add_camera(0, x0).unwrap();
        g.add_camera(1, x1).unwrap();
        g.add_landmark(0, l0).unwrap();
        let u = exp(&t6([0.12, -0.18, 0.33, 0.9, 0.6, -0.1]));
        g.add_odometry(0, 1, u, DiagonalNoise::isotropic(0.01)).unwrap();
        let z0 = exp(&t6([0.3, 0.2, -0.5, 2.1, 0.9, 0.4]));
        let z1 = exp(&t6([0.2, 0.3, -0.7, 1.2, 0.3, 0.8]));
        g.add_measurement(0, 0, z0, DiagonalNoise::isotropic(0.1)).unwrap();
        g.add_measurement(1, 0, z1, DiagonalNoise::isotropic(0.1)).unwrap();
        g.anchor_first_camera().unwrap();
        g
    }

    fn matrix_oracle_residual(m: &Pose, a: &Pose, b: &Pose) -> Matrix4<f64> {
        m.to_matrix().try_inverse().unwrap() * a.to_matrix().try_inverse().unwrap() * b.to_matrix()
    }

    #[test]
    fn zero_residual_cases() {
        let mut values = Values::new();
        values.insert(VariableKey::camera(0), Pose::identity());
        values.insert(VariableKey::camera(1), Pose::identity());
        let mut f = OdometryFactor {
            from: VariableKey::camera(0),
            to: VariableKey::camera(1),
            measurement: Pose::identity(),
            noise: DiagonalNoise::isotropic(0.01),
        };
        assert_eq!(residual_odometry(&f, &values).unwrap(), Tangent::zeros());
        let u = exp(&t6([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        values.insert(VariableKey::camera(1), u);
        f.measurement = u;
        assert!(residual_odometry(&f, &values).unwrap().norm() < 1e-12);

        let x = exp(&t6([0.3, -0.1, 0.2, 1.0, 2.0, 3.0]));
        let l = exp(&t6([-0.2, 0.4, 0.1, 0.5, -1.0, 2.0]));
        values.insert(VariableKey::camera(0), x);
        values.insert(VariableKey::landmark(0), l);
        let lf = LandmarkFactor {
            id: FactorId(0),
            camera: VariableKey::camera(0),
            landmark: VariableKey::landmark(0),
            measurement: x.between(&l),
            noise: DiagonalNoise::isotropic(0.1),
        };
        assert!(residual_landmark(&lf, &values).unwrap().norm() < 1e-12);
    }

    #[test]
    fn residuals_match_matrix_oracle() {
        let g = small_graph();
        let v = g.values();
        for f in g.odometry() {
            let m = matrix_oracle_residual(&f.measurement, &v[&f.from], &v[&f.to]);
            let e = residual_odometry(f, v).unwrap();
            assert!((exp(&e).to_matrix() - m).abs().max() < 1e-9);
        }
        for f in g.measurements() {
            let m = matrix_oracle_residual(&f.measurement, &v[&f.camera], &v[&f.landmark]);
            let e = residual_landmark(f, v).unwrap();
            assert!((exp(&e).to_matrix() - m).abs().max() < 1e-9);
        }
    }

    #[test]
    fn missing_variable_is_reported() {
        let f = OdometryFactor {
            from: VariableKey::camera(0),
            to: VariableKey::camera(1),
            measurement: Pose::identity(),
            noise: DiagonalNoise::isotropic(0.01),
        };
        assert_eq!(
            residual_odometry(&f, &Values::new()),
            Err(GraphError::MissingVariable(VariableKey::camera(0)))
        );
        let mut g = PoseGraph::new();
        g.add_camera(0, Pose::identity()).unwrap();
        assert!(g.add_odometry(0, 2, Pose::identity(), DiagonalNoise::isotropic(1.0)).is_err());
        assert_eq!(
            g.add_measurement(0, 3, Pose::identity(), DiagonalNoise::isotropic(1.0)),
            Err(GraphError::MissingVariable(VariableKey::landmark(3)))
        );
    }

    #[test]
    fn loss_of_single_unit_residual() {
        let mut g = PoseGraph::new();
        g.add_camera(0, Pose::identity()).unwrap();
        g.add_landmark(0, exp(&t6([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]))).unwrap();
        let mut var = nalgebra::Vector6::repeat(1.0);
        var[0] = 0.1;
        g.add_measurement(0, 0, Pose::identity(), DiagonalNoise::new(var).unwrap())
            .unwrap();
        assert!((graph_loss(&g).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_terms_balance_at_closed_form_covariance() {
        let mut g = PoseGraph::new();
        g.add_camera(0, Pose::identity()).unwrap();
        let e = t6([0.05, -0.02, 0.1, 0.3, -0.2, 0.01]);
        g.add_landmark(0, exp(&e)).unwrap();
        let w = RegularizationWeight::new(10.0).unwrap();
        let e_actual = exp(&e).log().unwrap();
        let noise = DiagonalNoise::new(e_actual.map(|v| w.lambda_prime() * v.abs())).unwrap();
        g.add_measurement(0, 0, Pose::identity(), noise).unwrap();
        let data = graph_loss(&g).unwrap();
        let reg = w.lambda() * noise.variances().sum();
        let l1 = e_actual.abs().sum() / w.lambda_prime();
        assert!((data - l1).abs() < 1e-12);
        assert!((reg - l1).abs() < 1e-12);
        assert!((joint_loss(&g, w, &FrozenLosses::new()).unwrap() - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_without_measurements_is_odometry_loss() {
        let mut g = small_graph();
        g.measurements.clear();
        let w = RegularizationWeight::default();
        assert_eq!(
            joint_loss(&g, w, &FrozenLosses::new()).unwrap(),
            graph_loss(&g).unwrap()
        );
    }

    #[test]
    fn frozen_factor_contributes_recorded_value() {
        let g = small_graph();
        let w = RegularizationWeight::default();
        let base = joint_loss(&g, w, &FrozenLosses::new()).unwrap();
        let f = &g.measurements()[1];
        let own = measurement_joint_loss(&residual_landmark(f, g.values()).unwrap(), &f.noise, w.lambda());
        let frozen = FrozenLosses::from([(FactorId(1), 123.0)]);
        let with = joint_loss(&g, w, &frozen).unwrap();
        assert!((with - (base - own + 123.0)).abs() < 1e-10);
    }

    #[test]
    fn identity_graph_odometry_jacobian_is_identity() {
        let mut g = PoseGraph::new();
        g.add_camera(0, Pose::identity()).unwrap();
        g.add_camera(1, Pose::identity()).unwrap();
        g.add_odometry(0, 1, Pose::identity(), DiagonalNoise::isotropic(1.0))
            .unwrap();
        let sys = linearize(&g).unwrap();
        let b = &sys.blocks[0];
        assert_eq!(b.keys, vec![VariableKey::camera(0), VariableKey::camera(1)]);
        assert!((b.jacobians[1] - Matrix6::identity()).abs().max() < 1e-15);
        assert!((b.jacobians[0] + Matrix6::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn whitened_residual_is_scaled_componentwise() {
        let g = small_graph();
        let sys = linearize(&g).unwrap();
        let f = &g.measurements()[0];
        let e = residual_landmark(f, g.values()).unwrap();
        let block = &sys.blocks[2];
        for j in 0..6 {
            assert!((block.residual[j] - e[j] / f.noise.variances()[j].sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn validate_detects_gauge_and_connectivity() {
        let mut g = PoseGraph::new();
        g.add_camera(0, Pose::identity()).unwrap();
        g.add_landmark(0, Pose::identity()).unwrap();
        assert_eq!(g.validate(), Err(GraphError::NoGauge));
        g.anchor_first_camera().unwrap();
        assert_eq!(g.validate(), Err(GraphError::Disconnected(VariableKey::landmark(0))));
        g.add_measurement(0, 0, Pose::identity(), DiagonalNoise::isotropic(0.1))
            .unwrap();
        assert_eq!(g.validate(), Ok(()));
        g.add_camera(2, Pose::identity()).unwrap();
        assert_eq!(g.validate(), Err(GraphError::CameraGap(1)));
    }
}
