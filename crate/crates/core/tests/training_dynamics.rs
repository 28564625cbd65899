mod common;

use common::random_case;
use pinn_core::network::{init_params, NetworkConfig};
use pinn_core::ode::make_shm;
use pinn_core::training::{
    adaptive_lambda_gradient, adaptive_loss, loss_components, Formulation, Trainer, TrainingConfig,
};
use proptest::prelude::*;
use std::f64::consts::PI;

#[test]
fn hardest_point_weight_never_decreases() {
    let mut config = TrainingConfig::new(
        NetworkConfig::mlp(2, 16, 2).unwrap(),
        make_shm(1.0, 4.0 * PI).unwrap(),
        64,
        1e-3,
    );
    config.formulation = Formulation::Adaptive;
    config.seed = 3;
    let mut trainer = Trainer::new(config).unwrap();
    let first = trainer.step().unwrap();
    let argmax = |r: &[f64]| {
        r.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
    };
    let hardest = argmax(&first.residual_sq);
    let mut weight = trainer.state().lambda[hardest + 1];
    let mut checked = 0;
    for _ in 1..100 {
        let info = trainer.step().unwrap();
        if argmax(&info.residual_sq) != hardest {
            break;
        }
        let next = trainer.state().lambda[hardest + 1];
        assert!(next >= weight, "λ fell from {weight} to {next}");
        weight = next;
        checked += 1;
    }
    assert!(checked > 0);
    assert!(weight > 0.0);
}

#[test]
fn uniform_step_lowers_loss_from_initialization() {
    let config = TrainingConfig::new(
        NetworkConfig::mlp(2, 32, 2).unwrap(),
        make_shm(1.0, PI).unwrap(),
        64,
        1e-3,
    );
    let mut trainer = Trainer::new(config.clone()).unwrap();
    let before = trainer.step().unwrap().components.total;
    for _ in 0..50 {
        trainer.step().unwrap();
    }
    let after = trainer.current_components().unwrap().total;
    assert!(after < before, "{before} -> {after}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn losses_are_non_negative(seed in 0u64..500) {
        let case = random_case(seed);
        let l = loss_components(&case.config, &case.params).unwrap();
        prop_assert!(l.residual_loss >= 0.0 && l.ic_loss >= 0.0);
        prop_assert_eq!(l.total, l.residual_loss + l.ic_loss);
    }

    #[test]
    fn saturated_attention_recovers_uniform_loss(seed in 0u64..500, level in 40.0f64..200.0) {
        let case = random_case(seed);
        let lambda = vec![level; case.config.n_points + 1];
        let weighted = adaptive_loss(&case.config, &case.params, &lambda).unwrap();
        let uniform = loss_components(&case.config, &case.params).unwrap().total;
        prop_assert!((weighted - uniform).abs() <= 1e-9 * uniform.max(1.0));
    }

    #[test]
    fn attention_gradient_is_non_negative(
        seed in 0u64..500,
        lambda in prop::collection::vec(-6.0f64..6.0, 9),
    ) {
        let case = random_case(seed);
        let lambda: Vec<f64> = (0..=case.config.n_points).map(|i| lambda[i % lambda.len()]).collect();
        let g = adaptive_lambda_gradient(&case.config, &case.params, &lambda).unwrap();
        prop_assert!(g.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn initialization_is_seed_deterministic(depth in 1usize..4, width in 1usize..16, seed: u64) {
        let config = NetworkConfig::mlp(depth, width, 2).unwrap();
        prop_assert_eq!(init_params(&config, seed), init_params(&config, seed));
    }
}
