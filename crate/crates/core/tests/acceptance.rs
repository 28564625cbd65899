//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line
//! straight to stderr (bypassing output capture) before asserting.
//!
//! The training criteria run full-length sweeps and take on the order of
//! two hours on a single core.

mod common;

use std::io::Write;
use std::sync::OnceLock;

use common::{gradient_gap, hvp_gap, random_case};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use pinn_core::autodiff::{Objective, Quadratic};
use pinn_core::diagnostics::hutchinson_trace;
use pinn_core::harness::{median, run_sweep, write_rows, ResultRow, SweepSpec};
use pinn_core::network::Arch;
use pinn_core::ode::{
    heat_condition_number, heat_eigenvalues, heat_operator, make_heat, make_shm, Benchmark,
    HeatParams,
};
use pinn_core::reference::{heat_spectral_solution, rk45_integrate, shm_closed_form};
use pinn_core::training::{make_collocation, Formulation, PinnObjective};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {id:>2} {} {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(line.as_bytes());
    let _ = err.flush();
    assert!(pass, "{}", line.trim_end());
}

fn workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Diverged runs count as total failure to solve.
fn rel_error_or_inf(row: &ResultRow) -> f64 {
    row.rel_error_eval.unwrap_or(f64::INFINITY)
}

fn median_by<F: Fn(&ResultRow) -> f64>(rows: &[ResultRow], complexity: f64, f: F) -> f64 {
    let mut values: Vec<f64> = rows
        .iter()
        .filter(|r| r.complexity == complexity)
        .map(f)
        .collect();
    median(&mut values).expect("rows for every complexity")
}

fn single_config_spec(
    benchmark: Benchmark,
    complexity: Vec<f64>,
    depth: usize,
    width: usize,
    formulation: Formulation,
) -> SweepSpec {
    let mut spec = SweepSpec::new(benchmark, complexity);
    spec.depths = vec![depth];
    spec.widths = vec![width];
    spec.learning_rates = vec![1e-3];
    spec.archs = vec![Arch::Mlp];
    spec.formulations = vec![formulation];
    spec.seeds = vec![0, 1, 2];
    spec.probes = 0;
    spec
}

/// The full 48-configuration grid on SHM with `T = π`.
fn shm_pi_grid() -> &'static [ResultRow] {
    static ROWS: OnceLock<Vec<ResultRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        let mut spec = SweepSpec::new(Benchmark::Shm, vec![1.0]);
        spec.probes = 0;
        run_sweep(&spec, workers()).unwrap().rows
    })
}

/// Depth-4 width-128 uniform MLP on heat, three seeds, with traces.
fn heat_ladder() -> &'static [ResultRow] {
    static ROWS: OnceLock<Vec<ResultRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        let mut spec = single_config_spec(
            Benchmark::Heat,
            vec![4.0, 16.0, 64.0, 256.0],
            4,
            128,
            Formulation::Uniform,
        );
        spec.probes = pinn_core::diagnostics::DEFAULT_PROBES;
        run_sweep(&spec, workers()).unwrap().rows
    })
}

#[test]
fn criterion_01_differentiation() {
    let mut worst_grad: f64 = 0.0;
    let mut worst_hvp: f64 = 0.0;
    for seed in 100..120 {
        let case = random_case(seed);
        let residual = PinnObjective::residual_component(&case.config, &case.train_points).unwrap();
        let ic = PinnObjective::ic_component(&case.config).unwrap();
        for obj in [&residual as &dyn Objective, &ic] {
            worst_grad = worst_grad.max(gradient_gap(obj, case.params.values()));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = common::rademacher(case.params.len(), &mut rng);
            worst_hvp = worst_hvp.max(hvp_gap(obj, case.params.values(), &v));
        }
    }
    verdict(
        1,
        "differentiation correctness",
        worst_grad <= 1e-5 && worst_hvp <= 1e-4,
        &format!("max gradient rel err {worst_grad:.2e} (<= 1e-5), max HVP rel err {worst_hvp:.2e} (<= 1e-4) over 20 cases"),
    );
}

#[test]
fn criterion_02_reference_solvers() {
    let horizon = 4.0 * PI;
    let times: Vec<f64> = (1..=2000).map(|k| k as f64 * horizon / 2000.0).collect();
    let traj = rk45_integrate(&make_shm(1.0, horizon).unwrap(), &times, 1e-8, 1e-10).unwrap();
    let shm_err = traj
        .states
        .rows()
        .into_iter()
        .zip(&times)
        .map(|(row, &t)| {
            let c = shm_closed_form(1.0, t);
            (row[0] - c[0]).abs().max((row[1] - c[1]).abs())
        })
        .fold(0.0, f64::max);

    let mut heat_err: f64 = 0.0;
    for n in [4, 8, 16, 32] {
        let params = HeatParams::new(n);
        let points = make_collocation(params.horizon, 1024).unwrap().eval_points;
        let traj =
            rk45_integrate(&make_heat(n, params.horizon).unwrap(), &points, 1e-8, 1e-10).unwrap();
        for (row, &t) in traj.states.rows().into_iter().zip(&points) {
            let exact = heat_spectral_solution(&params, t).unwrap();
            for (a, b) in row.iter().zip(&exact) {
                heat_err = heat_err.max((a - b).abs());
            }
        }
    }
    verdict(
        2,
        "reference-solver correctness",
        shm_err <= 1e-8 && heat_err <= 1e-7,
        &format!("SHM max err over 4π {shm_err:.2e} (<= 1e-8), heat RK45 vs spectral {heat_err:.2e} (<= 1e-7)"),
    );
}

#[test]
fn criterion_03_conditioning() {
    let mut worst: f64 = 0.0;
    for n in [4, 8, 16] {
        let a = heat_operator(n).to_dense();
        let m = DMatrix::from_row_slice(n, n, a.as_slice().unwrap());
        let mut dense: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        dense.sort_by(|a, b| b.total_cmp(a));
        let mut formula = heat_eigenvalues(n).unwrap();
        formula.sort_by(|a, b| b.total_cmp(a));
        for (x, y) in formula.iter().zip(&dense) {
            worst = worst.max((x - y).abs() / y.abs());
        }
        let kappa = dense[n - 1] / dense[0];
        worst = worst.max((heat_condition_number(n).unwrap() - kappa).abs() / kappa);
    }
    let kappas: Vec<f64> = (4..=512)
        .map(|n| heat_condition_number(n).unwrap())
        .collect();
    let increasing = kappas.windows(2).all(|w| w[1] > w[0]);
    verdict(
        3,
        "conditioning formulas",
        worst <= 1e-9 && increasing,
        &format!("max rel err vs dense eigensolver {worst:.2e} (<= 1e-9), κ strictly increasing on 4..=512: {increasing}"),
    );
}

#[test]
fn criterion_04_hutchinson() {
    let mut covered = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial);
        let m = rng.random_range(2..=50);
        let mut q = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..=i {
                let x: f64 = rng.random_range(-1.0..1.0);
                q[[i, j]] = x;
                q[[j, i]] = x;
            }
        }
        let quad = Quadratic::new(q, vec![0.0; m], 0.0).unwrap();
        let est = hutchinson_trace(&quad, &vec![0.0; m], 64, trial).unwrap();
        if (est.mean - quad.trace()).abs() <= 4.0 * est.stderr {
            covered += 1;
        }
    }
    let diag = Quadratic::diagonal(&[1.0, 2.0, 3.0]);
    let exact = hutchinson_trace(&diag, &[0.0; 3], 64, 1).unwrap();
    let exact_ok = exact.mean == 12.0 && exact.stderr == 0.0;
    verdict(
        4,
        "Hutchinson validity",
        covered >= 95 && exact_ok,
        &format!(
            "{covered}/100 trials within 4 stderr (>= 95), diagonal case mean {} stderr {}",
            exact.mean, exact.stderr
        ),
    );
}

#[test]
fn criterion_05_easy_regime() {
    let row = shm_pi_grid()
        .iter()
        .find(|r| {
            r.depth == 4
                && r.width == 64
                && r.arch == Arch::Mlp
                && r.lr == 1e-3
                && r.formulation == Formulation::Uniform
        })
        .unwrap();
    let err = rel_error_or_inf(row);
    verdict(
        5,
        "easy-regime training",
        err < 0.1,
        &format!("SHM T=π depth 4 width 64 MLP uniform: RelError {err:.4} (< 0.1)"),
    );
}

#[test]
fn criterion_06_ic_learnability() {
    let mut spec = SweepSpec::new(Benchmark::Shm, vec![4.0]);
    spec.depths = vec![2, 4];
    spec.widths = vec![64];
    spec.probes = 0;
    let mut rows = run_sweep(&spec, workers()).unwrap().rows;
    rows.extend(
        shm_pi_grid()
            .iter()
            .filter(|r| (r.depth == 2 || r.depth == 4) && r.width == 64)
            .cloned(),
    );
    let ic: Vec<f64> = rows
        .iter()
        .map(|r| r.rel_error_ic.unwrap_or(f64::INFINITY))
        .collect();
    let mean = ic.iter().sum::<f64>() / ic.len() as f64;
    let worst = ic.iter().copied().fold(0.0, f64::max);
    verdict(
        6,
        "IC learnability",
        mean <= 0.05,
        &format!(
            "mean RelError_0 {mean:.4} (<= 0.05) over {} runs, worst {worst:.4}",
            ic.len()
        ),
    );
}

#[test]
fn criterion_07_shm_degradation() {
    let spec = single_config_spec(
        Benchmark::Shm,
        vec![2.0, 32.0],
        2,
        64,
        Formulation::Adaptive,
    );
    let rows = run_sweep(&spec, workers()).unwrap().rows;
    let short = median_by(&rows, 2.0, rel_error_or_inf);
    let long = median_by(&rows, 32.0, rel_error_or_inf);
    verdict(
        7,
        "SHM degradation trend",
        long >= 5.0 * short && long >= 0.5,
        &format!(
            "median RelError T=2π {short:.4}, T=32π {long:.4} (ratio {:.1} >= 5, >= 0.5)",
            long / short
        ),
    );
}

#[test]
fn criterion_08_heat_degradation() {
    let rows = heat_ladder();
    let medians: Vec<f64> = [4.0, 16.0, 64.0, 256.0]
        .iter()
        .map(|&n| median_by(rows, n, rel_error_or_inf))
        .collect();
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        8,
        "heat degradation trend",
        monotone && medians[3] >= 0.5,
        &format!("median RelError over N=4,16,64,256: {medians:.4?} (non-decreasing, last >= 0.5)"),
    );
}

#[test]
fn criterion_09_laplacian_trend() {
    let rows = heat_ladder();
    let medians: Vec<f64> = [4.0, 16.0, 64.0, 256.0]
        .iter()
        .map(|&n| median_by(rows, n, |r| r.residual_trace_normalized.unwrap_or(f64::NAN)))
        .collect();
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        9,
        "Laplacian trend",
        monotone,
        &format!(
            "median κ-normalized residual trace over N=4,16,64,256: [{}] (non-decreasing)",
            medians
                .iter()
                .map(|m| format!("{m:.3e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
}

#[test]
fn criterion_10_harness_determinism() {
    let mut shm = SweepSpec::new(Benchmark::Shm, vec![1.0, 2.0]);
    shm.iterations = 101;
    shm.probes = 4;
    let mut heat = SweepSpec::new(Benchmark::Heat, vec![4.0]);
    heat.iterations = 101;
    heat.probes = 4;

    let mut identical = true;
    let mut complete = true;
    let mut total = 0;
    for spec in [&shm, &heat] {
        let csv = |workers: usize| {
            let mut buf = Vec::new();
            let rows = run_sweep(spec, workers).unwrap().rows;
            write_rows(&mut buf, &rows).unwrap();
            (buf, rows)
        };
        let (serial, rows) = csv(1);
        let (parallel, _) = csv(4);
        identical &= serial == parallel;
        for &c in &spec.complexity_values {
            for &seed in &spec.seeds {
                complete &= rows
                    .iter()
                    .filter(|r| r.complexity == c && r.seed == seed)
                    .count()
                    == 48;
            }
        }
        total += rows.len();
    }
    verdict(
        10,
        "harness determinism and grid completeness",
        identical && complete,
        &format!("byte-identical across 1 and 4 workers: {identical}, 48 rows per (benchmark, complexity, seed): {complete}, {total} rows"),
    );
}

#[test]
fn property_easy_regime_grid_sanity() {
    let rows = shm_pi_grid();
    let good = rows.iter().filter(|r| rel_error_or_inf(r) < 0.1).count();
    let line = format!(
        "training sanity: {good}/{} SHM T=π configurations reach RelError < 0.1 (>= 40)\n",
        rows.len()
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(good >= 40, "{}", line.trim_end());
}
