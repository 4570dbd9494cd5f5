#![allow(dead_code)]

use act_slam::eval::Trajectory;
use act_slam::graph::{Values, VariableKey};
use act_slam::liegroup::{exp, Pose, Tangent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tangent with rotation norm below `max_angle` and translation in a 2 m box.
pub fn random_tangent(rng: &mut ChaCha8Rng, max_angle: f64) -> Tangent {
    let mut xi = Tangent::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let w = xi.fixed_rows::<3>(0).into_owned();
    let angle = rng.random_range(0.0..max_angle);
    let w = if w.norm() > 1e-9 { w.normalize() * angle } else { w };
    xi.fixed_rows_mut::<3>(0).copy_from(&w);
    xi
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    exp(&random_tangent(rng, 3.0))
}

pub fn cameras(values: &Values, count: usize) -> Trajectory {
    Trajectory::from_poses((0..count).map(|t| values[&VariableKey::camera(t)]))
}

pub fn max_tangent_distance(a: &Values, b: &Values) -> f64 {
    a.iter()
        .map(|(k, p)| p.between(&b[k]).log_principal().norm())
        .fold(0.0, f64::max)
}
