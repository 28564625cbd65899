#![allow(dead_code)]

use pinn_core::autodiff::{grad_loss, hvp, Objective};
use pinn_core::network::{init_params, Arch, NetworkConfig, ParamVector};
use pinn_core::ode::{make_heat, make_shm, OdeSystem};
use pinn_core::training::{make_collocation, TrainingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small random network/system pair with perturbed initial weights.
pub struct Case {
    pub config: TrainingConfig,
    pub params: ParamVector,
    pub train_points: Vec<f64>,
}

pub fn random_system(rng: &mut ChaCha8Rng) -> OdeSystem {
    if rng.random_bool(0.5) {
        make_shm(rng.random_range(0.5..2.0), rng.random_range(0.5..4.0)).unwrap()
    } else {
        make_heat(rng.random_range(3..7), 0.1).unwrap()
    }
}

pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let system = random_system(&mut rng);
    let arch = if rng.random_bool(0.5) {
        Arch::Mlp
    } else {
        Arch::ResNet
    };
    let network = NetworkConfig::new(
        rng.random_range(1..4),
        rng.random_range(2..7),
        arch,
        system.dim(),
    )
    .unwrap();
    let n_points = rng.random_range(3..9);
    let config = TrainingConfig::new(network, system, n_points, 1e-3);
    let mut params = init_params(&config.network, seed);
    // Perturb everything, biases included, so no gradient component is
    // structurally zero.
    for w in params.values_mut() {
        *w += rng.random_range(-0.3..0.3);
    }
    let train_points = make_collocation(config.system.horizon, n_points)
        .unwrap()
        .train_points;
    Case {
        config,
        params,
        train_points,
    }
}

/// Fourth-order central difference of `f` along coordinate `i`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut y = x.to_vec();
    let mut at = |d: f64| {
        y[i] = x[i] + d;
        f(&y)
    };
    let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rademacher(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect()
}

fn loss_value(obj: &dyn Objective, w: &[f64]) -> f64 {
    grad_loss(obj, w).unwrap().loss_value
}

/// Largest component-wise relative gap between the gradient and a
/// fourth-order central difference, over components above `1e-8`.
pub fn gradient_gap(obj: &dyn Objective, w: &[f64]) -> f64 {
    let g = grad_loss(obj, w).unwrap().gradient;
    let f = |x: &[f64]| loss_value(obj, x);
    g.iter()
        .enumerate()
        .filter(|(_, gi)| gi.abs() > 1e-8)
        .map(|(i, &gi)| rel_diff(gi, central_difference(&f, w, i, 1e-3)))
        .fold(0.0, f64::max)
}

pub fn hvp_gap(obj: &dyn Objective, w: &[f64], v: &[f64]) -> f64 {
    let eps = 1e-5;
    let shifted = |s: f64| {
        let x: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + s * b).collect();
        grad_loss(obj, &x).unwrap().gradient
    };
    let (gp, gm) = (shifted(eps), shifted(-eps));
    let fd: Vec<f64> = gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * eps))
        .collect();
    let hv = hvp(obj, w, v).unwrap();
    let diff: Vec<f64> = hv.iter().zip(&fd).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&hv).max(norm(&fd))
}
