mod common;

use act_slam::graph::{linearize, PoseGraph};
use act_slam::liegroup::{exp, log, DiagonalNoise, Pose, Tangent};
use nalgebra::Matrix6;
use proptest::prelude::*;

use common::{random_pose, random_tangent, rng};

fn tangent_strategy(max_angle: f64) -> impl Strategy<Value = Tangent> {
    (prop::array::uniform3(-1.0f64..1.0), 0.0..max_angle, prop::array::uniform3(-2.0f64..2.0)).prop_map(
        move |(axis, angle, rho)| {
            let w = nalgebra::Vector3::from(axis);
            let w = if w.norm() > 1e-6 { w.normalize() * angle } else { nalgebra::Vector3::zeros() };
            Tangent::new(w.x, w.y, w.z, rho[0], rho[1], rho[2])
        },
    )
}

fn pose_close(a: &Pose, b: &Pose, tol: f64) -> bool {
    (a.to_matrix() - b.to_matrix()).abs().max() < tol
}

proptest! {
    #[test]
    fn compose_is_associative(a in tangent_strategy(3.1), b in tangent_strategy(3.1), c in tangent_strategy(3.1)) {
        let (a, b, c) = (exp(&a), exp(&b), exp(&c));
        prop_assert!(pose_close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-12));
    }

    #[test]
    fn inverse_cancels(a in tangent_strategy(3.1)) {
        let a = exp(&a);
        prop_assert!(pose_close(&a.compose(&a.inverse()), &Pose::identity(), 1e-12));
    }

    #[test]
    fn exp_log_roundtrip(xi in tangent_strategy(3.1)) {
        let back = log(&exp(&xi)).unwrap();
        prop_assert!((back - xi).norm() < 1e-9);
    }

    #[test]
    fn adjoint_moves_perturbations(xi in tangent_strategy(3.0), d in tangent_strategy(0.5)) {
        let x = exp(&xi);
        let left = exp(&(x.adjoint() * d)).compose(&x);
        prop_assert!(pose_close(&left, &x.compose(&exp(&d)), 1e-10));
    }
}

/// Whitened residual blocks of a single-factor graph, by central differences.
fn numeric_jacobians(graph: &PoseGraph, h: f64) -> Vec<Matrix6<f64>> {
    let base = linearize(graph).unwrap();
    let block = base.blocks.last().unwrap();
    block
        .keys
        .iter()
        .map(|key| {
            let mut jac = Matrix6::zeros();
            for c in 0..6 {
                let mut d = Tangent::zeros();
                d[c] = h;
                let eval = |delta: Tangent| {
                    let mut g = graph.clone();
                    let v = g.values_mut().get_mut(key).unwrap();
                    *v = v.retract(&delta);
                    linearize(&g).unwrap().blocks.last().unwrap().residual
                };
                let col = (eval(d) - eval(-d)) / (2.0 * h);
                jac.set_column(c, &col);
            }
            jac
        })
        .collect()
}

fn check_factor(graph: &PoseGraph) -> f64 {
    let analytic = linearize(graph).unwrap();
    let block = analytic.blocks.last().unwrap();
    let numeric = numeric_jacobians(graph, 1e-6);
    block
        .jacobians
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).norm() / a.norm().max(1.0))
        .fold(0.0, f64::max)
}

#[test]
fn jacobians_match_finite_differences_on_500_factors() {
    let mut r = rng(7);
    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let a = random_pose(&mut r);
        let b = random_pose(&mut r);
        // keep the residual angle away from the cut locus
        let m = a.between(&b).retract(&random_tangent(&mut r, 1.5));
        let noise = DiagonalNoise::new(Tangent::from_fn(|k, _| 0.05 + 0.1 * k as f64)).unwrap();
        let mut g = PoseGraph::new();
        if i % 2 == 0 {
            g.add_camera(0, a).unwrap();
            g.add_camera(1, b).unwrap();
            g.add_odometry(0, 1, m, noise).unwrap();
        } else {
            g.add_camera(0, a).unwrap();
            g.add_landmark(0, b).unwrap();
            g.add_measurement(0, 0, m, noise).unwrap();
        }
        worst = worst.max(check_factor(&g));
    }
    assert!(worst < 1e-5, "worst relative Jacobian error {worst:e}");
}

#[test]
fn prior_jacobian_matches_finite_differences() {
    let mut r = rng(11);
    for _ in 0..50 {
        let mut g = PoseGraph::new();
        g.add_camera(0, random_pose(&mut r)).unwrap();
        g.set_prior(
            act_slam::graph::VariableKey::camera(0),
            random_pose(&mut r).retract(&Tangent::zeros()),
            DiagonalNoise::isotropic(0.3),
        )
        .unwrap();
        let p = g.prior().unwrap().pose;
        // bring the residual below the cut locus
        let near = p.retract(&random_tangent(&mut r, 1.5));
        *g.values_mut().get_mut(&act_slam::graph::VariableKey::camera(0)).unwrap() = near;
        assert!(check_factor(&g) < 1e-5);
    }
}
