use serde::{Deserialize, Serialize};

use super::linear::{Backend, NormalEquations};
use super::{chi2_flags, SolveError, SolveReport, Termination};
use crate::graph::{graph_loss, linearize, retract_all, PoseGraph, Values};

const MAX_DAMPING: f64 = 1e16;
const MIN_DAMPING: f64 = 1e-15;
const STEP_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub max_iters: usize,
    /// Stop once an accepted step lowers the loss by less than this fraction.
    pub rel_tol: f64,
    /// Confidence of the post-hoc χ² inlier flags.
    pub chi2_confidence: f64,
    #[serde(skip)]
    pub backend: Option<Backend>,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 10.0,
            max_iters: 100,
            rel_tol: 1e-10,
            chi2_confidence: 0.95,
            backend: None,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let positive = [self.initial_damping, self.damping_up, self.damping_down];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(SolveError::Config("LM damping parameters must be positive".into()));
        }
        if self.damping_up <= 1.0 || self.damping_down <= 1.0 {
            return Err(SolveError::Config("LM damping factors must exceed 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(SolveError::Config("LM tolerance must lie in (0, 1)".into()));
        }
        if self.max_iters == 0 {
            return Err(SolveError::Config("LM needs at least one iteration".into()));
        }
        Ok(())
    }
}

/// Raw Levenberg–Marquardt result; `graph` holds the final values.
#[derive(Clone, Debug, PartialEq)]
pub struct LmOutcome {
    pub initial_loss: f64,
    pub loss_trace: Vec<f64>,
    pub iterates: Vec<Values>,
    pub termination: Termination,
    pub failure: Option<String>,
}

impl LmOutcome {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Runs LM in place on the graph's values with its current noise models.
pub fn optimize(graph: &mut PoseGraph, config: &LmConfig) -> Result<LmOutcome, SolveError> {
    config.validate()?;
    let backend = config.backend.unwrap_or(Backend::Auto);
    let initial_loss = graph_loss(graph)?;
    let mut loss = initial_loss;
    let mut mu = config.initial_damping;
    let mut outcome = LmOutcome {
        initial_loss,
        loss_trace: Vec::new(),
        iterates: Vec::new(),
        termination: Termination::MaxIters,
        failure: None,
    };

    for _ in 0..config.max_iters {
        let system = linearize(graph)?;
        let normal = NormalEquations::assemble(&system);
        let accepted = loop {
            let Some(delta) = normal.solve_damped(mu, backend) else {
                mu *= config.damping_up;
                if mu > MAX_DAMPING {
                    outcome.termination = Termination::Failed;
                    outcome.failure = Some(format!(
                        "normal equations of dimension {} not positive definite at damping {mu:e}",
                        normal.dim()
                    ));
                    return Ok(outcome);
                }
                continue;
            };
            let scale = graph
                .values()
                .values()
                .map(|p| p.translation().norm())
                .fold(1.0, f64::max);
            if delta.amax() <= STEP_TOL * scale {
                break None;
            }
            let candidate = retract_all(graph.values(), &system.ordering, &delta);
            let previous = std::mem::replace(graph.values_mut(), candidate);
            let new_loss = graph_loss(graph)?;
            if new_loss.is_finite() && new_loss < loss {
                mu = (mu / config.damping_down).max(MIN_DAMPING);
                break Some(new_loss);
            }
            graph.set_values(previous);
            mu *= config.damping_up;
            if mu > MAX_DAMPING {
                break None;
            }
        };
        let Some(new_loss) = accepted else {
            outcome.termination = Termination::Converged;
            return Ok(outcome);
        };
        let decrease = (loss - new_loss) / loss.max(f64::MIN_POSITIVE);
        loss = new_loss;
        outcome.loss_trace.push(new_loss);
        outcome.iterates.push(graph.values().clone());
        if decrease < config.rel_tol {
            outcome.termination = Termination::Converged;
            return Ok(outcome);
        }
    }
    Ok(outcome)
}

/// Gaussian PGO by Levenberg–Marquardt.
pub fn solve_lm(graph: &PoseGraph, config: &LmConfig) -> Result<SolveReport, SolveError> {
    graph.validate()?;
    let mut work = graph.clone();
    let outcome = optimize(&mut work, config)?;
    let estimates = work.values().clone();
    Ok(SolveReport {
        method: "lm".into(),
        inlier_flags: chi2_flags(graph, &estimates, config.chi2_confidence)?,
        final_covariances: graph.measurements().iter().map(|f| (f.id, f.noise)).collect(),
        estimates,
        initial_loss: outcome.initial_loss,
        loss_trace: outcome.loss_trace,
        iterates: outcome.iterates,
        termination: outcome.termination,
        failure: outcome.failure,
        monotonicity_violations: Vec::new(),
    })
}
