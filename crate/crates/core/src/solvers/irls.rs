use serde::{Deserialize, Serialize};

use super::kernel::{KernelKind, RobustKernel};
use super::lm::{optimize, solve_lm, LmConfig};
use super::{chi2_flags, SolveError, SolveReport, Termination};
use crate::graph::{odometry_loss, residual_landmark, PoseGraph};
use crate::liegroup::{mahalanobis_sq, DiagonalNoise, Tangent};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlsConfig {
    pub max_outer: usize,
    /// Stop when the robust loss drops by less than this fraction.
    pub rel_tol: f64,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        Self {
            max_outer: 20,
            rel_tol: 1e-6,
        }
    }
}

/// Base covariance rescaled uniformly by `1/w(‖e‖_Σ)`.
pub fn irls_effective_noise(kernel: &RobustKernel, base: &DiagonalNoise, e: &Tangent) -> DiagonalNoise {
    let r = mahalanobis_sq(e, base).sqrt();
    base.scaled(1.0 / kernel.weight(r))
}

/// `Σ_k ρ(‖e_k‖_{Σ_k}) + Σ_t ‖e_t‖²_{Σ_t}` using the noise stored in `graph`.
pub fn robust_loss(graph: &PoseGraph, kernel: &RobustKernel) -> Result<f64, SolveError> {
    let mut total = odometry_loss(graph)?;
    for f in graph.measurements() {
        let e = residual_landmark(f, graph.values())?;
        total += kernel.rho(mahalanobis_sq(&e, &f.noise).sqrt());
    }
    Ok(total)
}

/// Iteratively re-weighted least squares over the object-measurement factors.
///
/// The first pass uses unit weights; each later pass rescales every
/// measurement covariance by the kernel weight of its residual at the
/// previous solution.
pub fn solve_irls(
    graph: &PoseGraph,
    kernel: &RobustKernel,
    config: &IrlsConfig,
    lm: &LmConfig,
) -> Result<SolveReport, SolveError> {
    if kernel.kind == KernelKind::None {
        let mut report = solve_lm(graph, lm)?;
        report.method = "irls-none".into();
        return Ok(report);
    }
    if config.max_outer == 0 || !(config.rel_tol >= 0.0 && config.rel_tol < 1.0) {
        return Err(SolveError::Config("IRLS needs max_outer ≥ 1 and rel_tol in [0, 1)".into()));
    }
    graph.validate()?;
    let base = graph.measurement_noises();
    let mut work = graph.clone();
    let mut scored = graph.clone();
    let initial_loss = robust_loss(graph, kernel)?;
    let mut report = SolveReport {
        method: kernel.kind.to_string(),
        estimates: graph.values().clone(),
        initial_loss,
        loss_trace: Vec::new(),
        iterates: Vec::new(),
        inlier_flags: Default::default(),
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
        scored.set_values(work.values().clone());
        let loss = robust_loss(&scored, kernel)?;
        if loss > previous {
            report.monotonicity_violations.push(outer);
        }
        report.loss_trace.push(loss);
        report.iterates.push(work.values().clone());
        for (f, base_noise) in graph.measurements().iter().zip(&base) {
            let e = residual_landmark(f, work.values())?;
            work.set_measurement_noise(f.id, irls_effective_noise(kernel, base_noise, &e));
        }
        let decrease = (previous - loss) / previous.max(f64::MIN_POSITIVE);
        previous = loss;
        if decrease.abs() < config.rel_tol {
            report.termination = Termination::Converged;
            break;
        }
    }
    report.estimates = work.values().clone();
    report.inlier_flags = chi2_flags(graph, &report.estimates, lm.chi2_confidence)?;
    report.final_covariances = work.measurements().iter().map(|f| (f.id, f.noise)).collect();
    Ok(report)
}
