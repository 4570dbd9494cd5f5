//! Automatic covariance tuning by alternating minimization.
//!
//! Each outer iteration solves the Gaussian problem with the current
//! measurement covariances, then resets every measurement covariance in
//! closed form from its residual. Measurements that fail a χ² test against
//! their *initial* covariance are blown up to `outlier_variance` and their
//! joint-loss contribution is frozen at the value it had just before the
//! blow-up, which keeps the recorded joint loss non-increasing.
//! Odometry covariances are never touched.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::graph::{
    joint_loss, measurement_joint_loss, residual_landmark, FrozenLosses, PoseGraph,
    RegularizationWeight,
};
use crate::liegroup::{mahalanobis_sq, DiagonalNoise, Tangent};
use crate::solvers::{optimize, LmConfig, SolveError, SolveReport, Termination};

/// Relative slack when checking the joint-loss trace for increases.
pub const MONOTONICITY_TOL: f64 = 1e-9;

/// Inverse CDF of χ²(dof) at `confidence`.
pub fn chi2_critical(dof: u32, confidence: f64) -> Result<f64, SolveError> {
    if dof == 0 {
        return Err(SolveError::Config("chi-square needs at least one degree of freedom".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(SolveError::Config(format!("confidence {confidence} outside (0, 1)")));
    }
    let dist = ChiSquared::new(dof as f64).map_err(|e| SolveError::Config(e.to_string()))?;
    Ok(dist.inverse_cdf(confidence))
}

/// True when the residual is an inlier under the initial covariance.
pub fn chi2_test(e: &Tangent, initial_noise: &DiagonalNoise, critical: f64) -> bool {
    mahalanobis_sq(e, initial_noise) < critical
}

/// Componentwise minimizer of `e_j²/σ²_j + λ σ²_j`: `σ²_j = λ′|e_j|`, floored.
pub fn covariance_update(e: &Tangent, weight: RegularizationWeight) -> DiagonalNoise {
    DiagonalNoise::floored(e.abs() * weight.lambda_prime())
}

/// Isotropic minimizer `σ² = ‖e‖/√(6λ)` on every component.
pub fn isotropic_covariance_update(e: &Tangent, weight: RegularizationWeight) -> DiagonalNoise {
    let v = e.norm() * weight.lambda_prime() / 6f64.sqrt();
    DiagonalNoise::floored(Tangent::repeat(v))
}

/// `σ²_j = max(σ²_min,j, e_j²)` with the factor's initial variances as floor.
pub fn dynamic_floor_update(e: &Tangent, initial: &DiagonalNoise) -> DiagonalNoise {
    DiagonalNoise::floored(e.component_mul(e).zip_map(initial.variances(), f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceRule {
    /// Diagonal `λ′|e|`.
    Componentwise,
    /// Scalar `‖e‖/√(6λ)` times identity.
    Isotropic,
    /// Closed-form dynamic covariance estimation.
    DynamicFloor,
}

impl CovarianceRule {
    pub fn apply(self, e: &Tangent, initial: &DiagonalNoise, weight: RegularizationWeight) -> DiagonalNoise {
        match self {
            CovarianceRule::Componentwise => covariance_update(e, weight),
            CovarianceRule::Isotropic => isotropic_covariance_update(e, weight),
            CovarianceRule::DynamicFloor => dynamic_floor_update(e, initial),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActConfig {
    pub lambda_prime: RegularizationWeight,
    pub max_outer: usize,
    /// Stop when the joint loss drops by less than this fraction.
    pub rel_tol: f64,
    pub chi2_confidence: f64,
    pub outlier_variance: f64,
    /// Disable to run the plain alternating scheme without outlier gating.
    pub gating: bool,
    pub rule: CovarianceRule,
}

impl Default for ActConfig {
    fn default() -> Self {
        Self {
            lambda_prime: RegularizationWeight::default(),
            max_outer: 10,
            rel_tol: 1e-4,
            chi2_confidence: 0.95,
            outlier_variance: 1e10,
            gating: true,
            rule: CovarianceRule::Componentwise,
        }
    }
}

impl ActConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if self.max_outer == 0 {
            return Err(SolveError::Config("max_outer must be at least 1".into()));
        }
        if !(self.chi2_confidence > 0.0 && self.chi2_confidence < 1.0) {
            return Err(SolveError::Config("chi2 confidence must lie in (0, 1)".into()));
        }
        if !(self.outlier_variance > 0.0 && self.outlier_variance.is_finite()) {
            return Err(SolveError::Config("outlier variance must be positive".into()));
        }
        if !(self.rel_tol >= 0.0 && self.rel_tol < 1.0) {
            return Err(SolveError::Config("relative tolerance must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Runs automatic covariance tuning; the graph's measurement noises are the
/// initial covariances `Σ_k^{(0)}`.
pub fn solve_act(graph: &PoseGraph, config: &ActConfig, lm: &LmConfig) -> Result<SolveReport, SolveError> {
    config.validate()?;
    graph.validate()?;
    let weight = config.lambda_prime;
    let lambda = weight.lambda();
    let initial = graph.measurement_noises();
    let critical = chi2_critical(6, config.chi2_confidence)?;
    let outlier_noise = DiagonalNoise::isotropic(config.outlier_variance);

    let mut work = graph.clone();
    let mut frozen = FrozenLosses::new();
    let initial_loss = joint_loss(&work, weight, &frozen)?;
    let mut report = SolveReport {
        method: match config.rule {
            CovarianceRule::Componentwise => "act",
            CovarianceRule::Isotropic => "act-isotropic",
            CovarianceRule::DynamicFloor => "cdce",
        }
        .into(),
        estimates: graph.values().clone(),
        initial_loss,
        loss_trace: Vec::new(),
        iterates: Vec::new(),
        inlier_flags: graph.measurements().iter().map(|f| (f.id, true)).collect(),
        final_covariances: Default::default(),
        termination: Termination::MaxIters,
        failure: None,
        monotonicity_violations: Vec::new(),
    };

    let mut previous = initial_loss;
    for outer in 1..=config.max_outer {
        let outcome = optimize(&mut work, lm)?;
        if outcome.termination == Termination::Failed {
            report.termination = Termination::Failed;
            report.failure = outcome.failure;
            break;
        }
        for (index, init) in initial.iter().enumerate() {
            let f = work.measurements()[index];
            let e = residual_landmark(&f, work.values())?;
            let inlier = !config.gating || chi2_test(&e, init, critical);
            let noise = if inlier {
                frozen.remove(&f.id);
                config.rule.apply(&e, init, weight)
            } else {
                frozen
                    .entry(f.id)
                    .or_insert_with(|| measurement_joint_loss(&e, &f.noise, lambda));
                outlier_noise
            };
            report.inlier_flags.insert(f.id, inlier);
            work.set_measurement_noise(f.id, noise);
        }
        let loss = joint_loss(&work, weight, &frozen)?;
        if loss > previous + MONOTONICITY_TOL * previous.abs() {
            report.monotonicity_violations.push(outer);
        }
        report.loss_trace.push(loss);
        report.iterates.push(work.values().clone());
        let decrease = (previous - loss) / previous.max(f64::MIN_POSITIVE);
        previous = loss;
        if decrease < config.rel_tol {
            report.termination = Termination::Converged;
            break;
        }
    }
    report.estimates = work.values().clone();
    report.final_covariances = work.measurements().iter().map(|f| (f.id, f.noise)).collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::VARIANCE_FLOOR;

    fn t6(v: [f64; 6]) -> Tangent {
        Tangent::from_row_slice(&v)
    }

    #[test]
    fn chi2_two_dof_closed_form() {
        let conf = 1.0 - (-1.0f64).exp();
        assert!((chi2_critical(2, conf).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn chi2_one_dof_one_sigma() {
        assert!((chi2_critical(1, 0.6827).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn chi2_rejects_bad_inputs() {
        assert!(chi2_critical(0, 0.95).is_err());
        assert!(chi2_critical(6, 1.0).is_err());
        assert!(chi2_critical(6, 0.0).is_err());
    }

    #[test]
    fn chi2_test_cases() {
        let critical = chi2_critical(6, 0.95).unwrap();
        let noise = DiagonalNoise::isotropic(0.1);
        assert!(chi2_test(&Tangent::zeros(), &noise, critical));
        // ‖e‖² = 1.26 → 12.6 against ≈12.5916
        let e = Tangent::repeat((1.26f64 / 6.0).sqrt());
        assert!(!chi2_test(&e, &noise, critical));
        let e = t6([0.2, -0.1, 0.3, 0.5, 0.1, -0.4]);
        assert_eq!(
            chi2_test(&e, &noise, critical),
            chi2_test(&(e * 2.0), &noise.scaled(4.0), critical)
        );
    }

    #[test]
    fn covariance_update_examples() {
        let w = RegularizationWeight::new(10.0).unwrap();
        let n = covariance_update(&t6([0.1, 0.0, 0.0, 0.0, 0.0, 0.0]), w);
        assert!((n.variances()[0] - 1.0).abs() < 1e-15);
        for j in 1..6 {
            assert_eq!(n.variances()[j], VARIANCE_FLOOR);
        }
        let n = covariance_update(&Tangent::zeros(), w);
        assert!(n.variances().iter().all(|&v| v == VARIANCE_FLOOR));
    }

    #[test]
    fn dynamic_floor_examples() {
        let init = DiagonalNoise::isotropic(0.01);
        let sigma = 0.1;
        let n = dynamic_floor_update(&t6([0.05, -0.099, 0.0, 10.0 * sigma, 0.0, 0.0]), &init);
        assert_eq!(n.variances()[0], 0.01);
        assert_eq!(n.variances()[1], 0.01);
        assert!((n.variances()[3] - 100.0 * 0.01).abs() < 1e-12);
    }

    #[test]
    fn isotropic_update_uses_euclidean_norm() {
        let w = RegularizationWeight::new(10.0).unwrap();
        let e = t6([0.3, 0.0, 0.4, 0.0, 0.0, 0.0]);
        let n = isotropic_covariance_update(&e, w);
        let expected = 0.5 / (6.0 * w.lambda()).sqrt();
        assert!(n.variances().iter().all(|v| (v - expected).abs() < 1e-15));
    }

    #[test]
    fn config_validation() {
        let bad = ActConfig {
            chi2_confidence: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ActConfig {
            max_outer: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(ActConfig::default().validate().is_ok());
    }
}
