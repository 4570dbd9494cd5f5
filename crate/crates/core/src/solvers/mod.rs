//! Gaussian and robust pose-graph solvers.
//!
//! [`solve_lm`] is plain Levenberg–Marquardt on the Gaussian loss.
//! [`solve_irls`] wraps it in an iteratively re-weighted loop for the
//! M-estimator baselines, and [`solve_cdce`] runs the alternating
//! covariance scheme of [`crate::act`] with the closed-form dynamic
//! covariance rule.

mod irls;
mod kernel;
pub mod linear;
mod lm;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::act::{chi2_critical, chi2_test, solve_act, ActConfig, CovarianceRule};
use crate::graph::{residual_landmark, FactorId, GraphError, PoseGraph, Values};
use crate::liegroup::DiagonalNoise;

pub use irls::{irls_effective_noise, robust_loss, solve_irls, IrlsConfig};
pub use kernel::{KernelKind, RobustKernel, L1_WEIGHT_FLOOR};
pub use lm::{optimize, solve_lm, LmConfig, LmOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    Failed,
}

/// Outcome of any solver in the crate.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub method: String,
    pub estimates: Values,
    /// Objective before the first iteration.
    pub initial_loss: f64,
    /// Objective after each iteration (accepted LM steps, or outer iterations).
    pub loss_trace: Vec<f64>,
    /// Estimates after each iteration, aligned with `loss_trace`.
    pub iterates: Vec<Values>,
    pub inlier_flags: BTreeMap<FactorId, bool>,
    pub final_covariances: BTreeMap<FactorId, DiagonalNoise>,
    pub termination: Termination,
    pub failure: Option<String>,
    /// Outer iterations whose objective rose above the previous one.
    pub monotonicity_violations: Vec<usize>,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.loss_trace.len()
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(self.initial_loss)
    }

    pub fn inliers(&self) -> impl Iterator<Item = FactorId> + '_ {
        self.inlier_flags
            .iter()
            .filter(|(_, &inlier)| inlier)
            .map(|(id, _)| *id)
    }
}

/// χ² inlier flags at `values` against each factor's noise in `graph`.
pub fn chi2_flags(
    graph: &PoseGraph,
    values: &Values,
    confidence: f64,
) -> Result<BTreeMap<FactorId, bool>, SolveError> {
    let critical = chi2_critical(6, confidence)?;
    graph
        .measurements()
        .iter()
        .map(|f| {
            let e = residual_landmark(f, values)?;
            Ok((f.id, chi2_test(&e, &f.noise, critical)))
        })
        .collect()
}

/// Alternating covariance estimation with `σ²_j = max(σ²_min,j, e_j²)`,
/// where `σ²_min` is each factor's initial variance.
pub fn solve_cdce(graph: &PoseGraph, config: &ActConfig, lm: &LmConfig) -> Result<SolveReport, SolveError> {
    let config = ActConfig {
        rule: CovarianceRule::DynamicFloor,
        ..*config
    };
    solve_act(graph, &config, lm)
}

/// Every solver selectable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lm,
    Huber,
    Cauchy,
    Gm,
    L1,
    Cdce,
    Act,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Lm,
        Method::Huber,
        Method::Cauchy,
        Method::Gm,
        Method::L1,
        Method::Cdce,
        Method::Act,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lm => "lm",
            Method::Huber => "huber",
            Method::Cauchy => "cauchy",
            Method::Gm => "gm",
            Method::L1 => "l1",
            Method::Cdce => "cdce",
            Method::Act => "act",
        }
    }

    /// Kernel of the IRLS baselines.
    pub fn kernel(self) -> Option<KernelKind> {
        match self {
            Method::Huber => Some(KernelKind::Huber),
            Method::Cauchy => Some(KernelKind::Cauchy),
            Method::Gm => Some(KernelKind::GemanMcClure),
            Method::L1 => Some(KernelKind::L1),
            Method::Lm | Method::Cdce | Method::Act => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = SolveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SolveError::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MethodConfig {
    /// Overrides the kernel's default parameter for the IRLS baselines.
    pub kernel_parameter: Option<f64>,
    pub lm: LmConfig,
    pub irls: IrlsConfig,
    pub act: ActConfig,
}

/// Runs `method` on `graph`.
pub fn solve(graph: &PoseGraph, method: Method, config: &MethodConfig) -> Result<SolveReport, SolveError> {
    if let Some(kind) = method.kernel() {
        let kernel = match config.kernel_parameter {
            Some(p) => RobustKernel::new(kind, p)
                .ok_or_else(|| SolveError::Config(format!("invalid {kind} parameter {p}")))?,
            None => RobustKernel::with_default(kind),
        };
        return solve_irls(graph, &kernel, &config.irls, &config.lm);
    }
    match method {
        Method::Cdce => solve_cdce(graph, &config.act, &config.lm),
        Method::Act => solve_act(graph, &config.act, &config.lm),
        _ => solve_lm(graph, &config.lm),
    }
}
