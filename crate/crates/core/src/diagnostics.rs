//! Relative-error metrics and Hutchinson estimates of loss Laplacians.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Objective;
use crate::error::{Error, Result};
use crate::network::{forward_batch, ParamVector};
use crate::ode::{heat_condition_number, OdeSystem, SystemKind};
use crate::reference::{reference_trajectory, ReferenceMethod, Trajectory};
use crate::training::{PinnObjective, TrainingConfig};

pub const DEFAULT_PROBES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossComponent {
    Residual,
    InitialCondition,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√n_probes`; zero for one probe.
    pub stderr: f64,
    pub n_probes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<LossComponent>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rel_error_eval: f64,
    pub rel_error_ic: f64,
}

/// `√(Σ‖u − û‖² / Σ‖u‖²)` over matching arrays.
pub fn rel_error(u_ref: ArrayView2<'_, f64>, u_hat: ArrayView2<'_, f64>) -> Result<f64> {
    if u_ref.shape() != u_hat.shape() {
        return Err(Error::Config(format!(
            "shape mismatch: reference {:?}, prediction {:?}",
            u_ref.shape(),
            u_hat.shape()
        )));
    }
    let denom: f64 = u_ref.iter().map(|x| x * x).sum();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "reference trajectory has zero norm".into(),
        ));
    }
    let num: f64 = u_ref
        .iter()
        .zip(u_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((num / denom).sqrt())
}

/// `‖u₀ − û(0)‖ / ‖u₀‖`.
pub fn rel_error_ic(u0: &[f64], u_hat0: &[f64]) -> Result<f64> {
    if u0.len() != u_hat0.len() {
        return Err(Error::Config(format!(
            "initial condition has {} components, prediction {}",
            u0.len(),
            u_hat0.len()
        )));
    }
    let denom: f64 = u0.iter().map(|x| x * x).sum();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "initial condition has zero norm".into(),
        ));
    }
    let num: f64 = u0.iter().zip(u_hat0).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((num / denom).sqrt())
}

/// Errors of a trained network on the held-out midpoints and at `t = 0`.
pub fn evaluate(
    config: &TrainingConfig,
    params: &ParamVector,
    method: ReferenceMethod,
    rtol: f64,
    atol: f64,
) -> Result<ErrorReport> {
    let colloc = config.collocation()?;
    let reference = reference_trajectory(&config.system, &colloc.eval_points, method, rtol, atol)?;
    error_report(&reference, config, params)
}

/// As [`evaluate`], against a precomputed reference sampled at the midpoints.
pub fn error_report(
    reference: &Trajectory,
    config: &TrainingConfig,
    params: &ParamVector,
) -> Result<ErrorReport> {
    let predicted = forward_batch(&config.network, params, &reference.times)?;
    let rel_error_eval = rel_error(reference.states.view(), predicted.t())?;
    let at_zero = forward_batch(&config.network, params, &[0.0])?;
    let u_hat0: Vec<f64> = at_zero.column(0).to_vec();
    let rel_error_ic = rel_error_ic(&config.system.u0, &u_hat0)?;
    Ok(ErrorReport {
        rel_error_eval,
        rel_error_ic,
    })
}

/// Rademacher vector for probe `index`, a pure function of `(seed, index)`.
pub fn rademacher_probe(len: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let bits: u64 = rng.random();
        let take = (len - out.len()).min(64);
        out.extend((0..take).map(|k| if bits >> k & 1 == 1 { 1.0 } else { -1.0 }));
    }
    out
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Hutchinson estimate of `tr ∇²L` from `n_probes` Rademacher probes.
/// Probes run in parallel; the result does not depend on scheduling.
pub fn hutchinson_trace(
    loss: &dyn Objective,
    params: &[f64],
    n_probes: usize,
    seed: u64,
) -> Result<TraceEstimate> {
    if n_probes == 0 {
        return Err(Error::Parameter("n_probes must be at least 1".into()));
    }
    let m = params.len();
    let samples: Vec<f64> = (0..n_probes as u64)
        .into_par_iter()
        .map(|i| {
            let v = rademacher_probe(m, seed, i);
            let hv = loss.hessian_vector(params, &v)?;
            Ok(compensated_sum(v.iter().zip(&hv).map(|(a, b)| a * b)))
        })
        .collect::<Result<_>>()?;
    let n = n_probes as f64;
    let mean = compensated_sum(samples.iter().copied()) / n;
    let stderr = if n_probes > 1 {
        let var = compensated_sum(samples.iter().map(|s| (s - mean) * (s - mean))) / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(TraceEstimate {
        mean,
        stderr,
        n_probes,
        component: None,
    })
}

/// Raw Laplacians of both uniform loss components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentTraces {
    pub residual: TraceEstimate,
    pub initial_condition: TraceEstimate,
}

pub fn component_traces(
    config: &TrainingConfig,
    params: &ParamVector,
    n_probes: usize,
    seed: u64,
) -> Result<ComponentTraces> {
    config.validate()?;
    let colloc = config.collocation()?;
    let residual_obj = PinnObjective::residual_component(config, &colloc.train_points)?;
    let ic_obj = PinnObjective::ic_component(config)?;
    let mut residual = hutchinson_trace(&residual_obj, params.values(), n_probes, seed)?;
    residual.component = Some(LossComponent::Residual);
    let mut initial_condition = hutchinson_trace(&ic_obj, params.values(), n_probes, seed)?;
    initial_condition.component = Some(LossComponent::InitialCondition);
    Ok(ComponentTraces {
        residual,
        initial_condition,
    })
}

/// Divisors `(residual, initial condition)`: `(κ_N, N)` for heat, `(1, 1)` for SHM.
pub fn laplacian_normalizers(system: &OdeSystem) -> Result<(f64, f64)> {
    match system.kind {
        SystemKind::Heat(p) => Ok((heat_condition_number(p.n_points)?, p.n_points as f64)),
        SystemKind::Shm(_) => Ok((1.0, 1.0)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedLaplacians {
    pub residual: f64,
    pub initial_condition: f64,
    pub raw: ComponentTraces,
}

/// Component Laplacians divided by [`laplacian_normalizers`].
pub fn normalized_laplacians(
    system: &OdeSystem,
    config: &TrainingConfig,
    params: &ParamVector,
    n_probes: usize,
    seed: u64,
) -> Result<NormalizedLaplacians> {
    let mut config = config.clone();
    config.system = system.clone();
    let raw = component_traces(&config, params, n_probes, seed)?;
    let (res_div, ic_div) = laplacian_normalizers(system)?;
    Ok(NormalizedLaplacians {
        residual: raw.residual.mean / res_div,
        initial_condition: raw.initial_condition.mean / ic_div,
        raw,
    })
}
