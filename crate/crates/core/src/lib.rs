//! Object-level pose-graph optimization with automatic covariance tuning,
//! robust M-estimator baselines, pseudo-labeling and a scene simulator.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod act;
pub mod bench;
pub mod eval;
pub mod graph;
pub mod io;
pub mod labeling;
pub mod liegroup;
pub mod sim;
pub mod solvers;
