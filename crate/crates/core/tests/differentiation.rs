mod common;

use common::{gradient_gap, hvp_gap, norm, random_case, rel_diff};
use pinn_core::autodiff::{eval_with_input_tangent, grad_loss, hvp, Dual, Objective, Quadratic};
use pinn_core::network::{forward, init_params, Arch, NetworkConfig, ParamVector};
use pinn_core::training::PinnObjective;
use proptest::prelude::*;

#[test]
fn input_tangent_matches_finite_difference() {
    let config = NetworkConfig::mlp(2, 8, 3).unwrap();
    let params = init_params(&config, 11);
    let h = 1e-5;
    for &t in &[-1.3, 0.0, 0.4, 2.5] {
        let (_, u_t, _) = eval_with_input_tangent(&config, &params, t).unwrap();
        let up = forward(&config, &params, t + h).unwrap();
        let um = forward(&config, &params, t - h).unwrap();
        for (k, &d) in u_t.iter().enumerate() {
            let fd = (up[k] - um[k]) / (2.0 * h);
            assert!(rel_diff(d, fd) <= 1e-6, "t={t} k={k}: {d} vs {fd}");
        }
    }
}

#[test]
fn forward_equals_extended_value() {
    for arch in [Arch::Mlp, Arch::ResNet] {
        let config = NetworkConfig::new(3, 7, arch, 4).unwrap();
        let params = init_params(&config, 5);
        for &t in &[0.0, 0.3, 7.0] {
            let (u, _, _) = eval_with_input_tangent(&config, &params, t).unwrap();
            assert_eq!(u, forward(&config, &params, t).unwrap());
        }
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    for seed in 0..20 {
        let case = random_case(seed);
        let residual = PinnObjective::residual_component(&case.config, &case.train_points).unwrap();
        let ic = PinnObjective::ic_component(&case.config).unwrap();
        for (name, obj) in [("residual", &residual as &dyn Objective), ("ic", &ic)] {
            let gap = gradient_gap(obj, case.params.values());
            assert!(gap <= 1e-5, "seed {seed} {name}: relative gap {gap:e}");
        }
    }
}

#[test]
fn hvps_match_gradient_differences() {
    for seed in 0..20 {
        let case = random_case(seed);
        let obj = PinnObjective::uniform(&case.config, &case.train_points).unwrap();
        let m = case.params.len();
        let v: Vec<f64> = (0..m)
            .map(|i| ((i * 7 + seed as usize) % 5) as f64 - 2.0)
            .collect();
        let gap = hvp_gap(&obj, case.params.values(), &v);
        assert!(gap <= 1e-4, "seed {seed}: relative gap {gap:e}");
    }
}

#[test]
fn quadratic_oracles() {
    let q = Quadratic::diagonal(&[1.0, 2.0, 3.0]);
    assert_eq!(
        hvp(&q, &[0.5, 0.5, 0.5], &[1.0, 1.0, 1.0]).unwrap(),
        vec![2.0, 4.0, 6.0]
    );
    assert_eq!(hvp(&q, &[0.5, 0.5, 0.5], &[0.0; 3]).unwrap(), vec![0.0; 3]);
    let c = Quadratic::constant(4, 2.5);
    let g = grad_loss(&c, &[1.0, -1.0, 3.0, 0.0]).unwrap();
    assert_eq!(g.loss_value, 2.5);
    assert_eq!(g.gradient, vec![0.0; 4]);
}

#[test]
fn zero_direction_gives_zero_hvp() {
    let case = random_case(3);
    let obj = PinnObjective::uniform(&case.config, &case.train_points).unwrap();
    let hv = hvp(&obj, case.params.values(), &vec![0.0; case.params.len()]).unwrap();
    assert!(hv.iter().all(|&x| x == 0.0));
}

fn small_case(seed: u64) -> common::Case {
    random_case(1000 + seed % 8)
}

fn direction(m: usize, raw: &[f64]) -> Vec<f64> {
    (0..m)
        .map(|i| raw[i % raw.len()] * (1.0 + (i % 3) as f64))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hvp_is_symmetric(
        seed in 0u64..8,
        a in prop::collection::vec(-1.0f64..1.0, 1..9),
        b in prop::collection::vec(-1.0f64..1.0, 1..9),
    ) {
        let case = small_case(seed);
        let obj = PinnObjective::uniform(&case.config, &case.train_points).unwrap();
        let w = case.params.values();
        let (u, v) = (direction(w.len(), &a), direction(w.len(), &b));
        let hu = hvp(&obj, w, &u).unwrap();
        let hv = hvp(&obj, w, &v).unwrap();
        let vhu: f64 = v.iter().zip(&hu).map(|(x, y)| x * y).sum();
        let uhv: f64 = u.iter().zip(&hv).map(|(x, y)| x * y).sum();
        // Normwise: relative to the Cauchy-Schwarz bound on both sides.
        let scale = (norm(&v) * norm(&hu)).max(norm(&u) * norm(&hv));
        prop_assert!((vhu - uhv).abs() <= 1e-8 * scale, "{} vs {}", vhu, uhv);
    }

    #[test]
    fn hvp_is_linear(
        seed in 0u64..8,
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
        a in prop::collection::vec(-1.0f64..1.0, 1..9),
        b in prop::collection::vec(-1.0f64..1.0, 1..9),
    ) {
        let case = small_case(seed);
        let obj = PinnObjective::uniform(&case.config, &case.train_points).unwrap();
        let w = case.params.values();
        let (u, v) = (direction(w.len(), &a), direction(w.len(), &b));
        let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| alpha * x + beta * y).collect();
        let lhs = hvp(&obj, w, &mix).unwrap();
        let hu = hvp(&obj, w, &u).unwrap();
        let hv = hvp(&obj, w, &v).unwrap();
        let rhs: Vec<f64> = hu.iter().zip(&hv).map(|(x, y)| alpha * x + beta * y).collect();
        let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(x, y)| x - y).collect();
        let scale = alpha.abs() * norm(&hu) + beta.abs() * norm(&hv);
        prop_assert!(norm(&diff) <= 1e-10 * scale.max(1e-300), "{:e} vs {:e}", norm(&diff), scale);
    }

    #[test]
    fn dual_product_and_tanh_rules(a in -5.0f64..5.0, da in -5.0f64..5.0, b in -5.0f64..5.0, db in -5.0f64..5.0) {
        let x = Dual::new(a, da);
        let y = Dual::new(b, db);
        let p = x * y;
        prop_assert_eq!(p.value, a * b);
        prop_assert!((p.tangent - (a * db + da * b)).abs() <= 1e-12 * (1.0 + p.tangent.abs()));
        let t = pinn_core::autodiff::Scalar::tanh(x);
        prop_assert_eq!(t.value, a.tanh());
        prop_assert!((t.tangent - da * (1.0 - a.tanh() * a.tanh())).abs() <= 1e-14 * (1.0 + da.abs()));
    }

    #[test]
    fn flatten_round_trips(depth in 1usize..4, width in 1usize..9, out in 1usize..5, seed in 0u64..1000, resnet: bool) {
        let arch = if resnet { Arch::ResNet } else { Arch::Mlp };
        let config = NetworkConfig::new(depth, width, arch, out).unwrap();
        let p = init_params(&config, seed);
        let back = ParamVector::flatten(&config, &p.unflatten()).unwrap();
        prop_assert_eq!(back.values(), p.values());
    }
}
