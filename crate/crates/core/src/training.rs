//! PINN objectives (uniform and attention-weighted min-max), collocation
//! grids, Adam descent on the network weights and Adam ascent on the
//! attention pre-weights.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward_extended, forward_extended, Differentiable, Scalar};
use crate::error::{Error, Result};
use crate::network::{check_params, init_params, param_count, NetworkConfig, ParamVector};
use crate::ode::OdeSystem;

pub const DEFAULT_ITERATIONS: usize = 10_241;
pub const LOG_EVERY: usize = 64;

/// Training points `𝒯 = {kT/D}` and held-out midpoints `𝒯′`.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationSet {
    pub train_points: Vec<f64>,
    pub eval_points: Vec<f64>,
}

pub fn make_collocation(horizon: f64, n_points: usize) -> Result<CollocationSet> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Parameter(format!(
            "T must be positive, got {horizon}"
        )));
    }
    if n_points < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 training points, got {n_points}"
        )));
    }
    let d = n_points as f64;
    let mut train_points: Vec<f64> = (1..=n_points).map(|k| k as f64 * horizon / d).collect();
    train_points[n_points - 1] = horizon;
    let eval_points = (1..n_points)
        .map(|k| (2 * k + 1) as f64 * horizon / (2.0 * d))
        .collect();
    Ok(CollocationSet {
        train_points,
        eval_points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    Uniform,
    Adaptive,
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Formulation::Uniform => "uniform",
            Formulation::Adaptive => "adaptive",
        })
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(Formulation::Uniform),
            "adaptive" => Ok(Formulation::Adaptive),
            other => Err(Error::Config(format!(
                "unknown formulation `{other}` (expected uniform or adaptive)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualReduction {
    #[default]
    Mean,
    Sum,
}

impl fmt::Display for ResidualReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResidualReduction::Mean => "mean",
            ResidualReduction::Sum => "sum",
        })
    }
}

impl FromStr for ResidualReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(ResidualReduction::Mean),
            "sum" => Ok(ResidualReduction::Sum),
            other => Err(Error::Config(format!(
                "unknown residual reduction `{other}` (expected mean or sum)"
            ))),
        }
    }
}

impl ResidualReduction {
    fn factor(self, n_points: usize) -> f64 {
        match self {
            ResidualReduction::Mean => 1.0 / n_points as f64,
            ResidualReduction::Sum => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub network: NetworkConfig,
    pub system: OdeSystem,
    pub formulation: Formulation,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Number of training points `D`.
    pub n_points: usize,
    pub seed: u64,
    #[serde(default)]
    pub residual_reduction: ResidualReduction,
    /// Ascent rate for the attention pre-weights.
    pub lambda_lr: f64,
}

impl TrainingConfig {
    /// Defaults: uniform, mean reduction, 10 241 iterations, `lambda_lr = lr`.
    pub fn new(
        network: NetworkConfig,
        system: OdeSystem,
        n_points: usize,
        learning_rate: f64,
    ) -> Self {
        Self {
            network,
            system,
            formulation: Formulation::Uniform,
            learning_rate,
            iterations: DEFAULT_ITERATIONS,
            n_points,
            seed: 0,
            residual_reduction: ResidualReduction::Mean,
            lambda_lr: learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.network.output_dim != self.system.dim() {
            return Err(Error::Config(format!(
                "network outputs {} values but the system has {} equations",
                self.network.output_dim,
                self.system.dim()
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.n_points < 2 {
            return Err(Error::Config("D must be at least 2".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("lambda_lr", self.lambda_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn collocation(&self) -> Result<CollocationSet> {
        make_collocation(self.system.horizon, self.n_points)
    }

    fn reduction_factor(&self) -> f64 {
        self.residual_reduction.factor(self.n_points)
    }
}

/// Squared-norm loss terms; `total = residual_loss + ic_loss`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub residual_loss: f64,
    pub ic_loss: f64,
    pub total: f64,
}

/// Per-point multipliers of a weighted PINN loss
/// `Σ_d w_d ‖𝒩(û)(t_d)‖² + w₀ ‖û(0) − u₀‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub residual: Vec<f64>,
    pub initial: f64,
}

/// Raw squared terms of one evaluation.
#[derive(Clone, Debug)]
pub(crate) struct PointTerms {
    /// `‖𝒩(û)(t_d)‖²` per training point.
    pub residual_sq: Vec<f64>,
    /// `‖û(0) − u₀‖²`.
    pub ic_sq: f64,
}

struct Evaluation<S> {
    loss: S,
    gradient: Option<Vec<S>>,
    terms: PointTerms,
}

/// Weighted PINN loss over fixed times, differentiable in the weights.
#[derive(Clone, Debug)]
pub struct PinnObjective<'a> {
    network: &'a NetworkConfig,
    system: &'a OdeSystem,
    /// `0` followed by the residual times.
    times: Vec<f64>,
    weights: LossWeights,
}

impl<'a> PinnObjective<'a> {
    pub fn new(
        network: &'a NetworkConfig,
        system: &'a OdeSystem,
        train_points: &[f64],
        weights: LossWeights,
    ) -> Result<Self> {
        if weights.residual.len() != train_points.len() {
            return Err(Error::Config(format!(
                "{} residual weights for {} points",
                weights.residual.len(),
                train_points.len()
            )));
        }
        if network.output_dim != system.dim() {
            return Err(Error::Config(format!(
                "network outputs {} values but the system has {} equations",
                network.output_dim,
                system.dim()
            )));
        }
        let mut times = Vec::with_capacity(train_points.len() + 1);
        times.push(0.0);
        times.extend_from_slice(train_points);
        Ok(Self {
            network,
            system,
            times,
            weights,
        })
    }

    /// The uniform loss of `config`.
    pub fn uniform(config: &'a TrainingConfig, train_points: &[f64]) -> Result<Self> {
        let w = config.reduction_factor() * config.system.residual_scale;
        Self::new(
            &config.network,
            &config.system,
            train_points,
            LossWeights {
                residual: vec![w; train_points.len()],
                initial: config.system.nu_ic,
            },
        )
    }

    /// Only the residual term of the uniform loss.
    pub fn residual_component(config: &'a TrainingConfig, train_points: &[f64]) -> Result<Self> {
        let mut obj = Self::uniform(config, train_points)?;
        obj.weights.initial = 0.0;
        Ok(obj)
    }

    /// Only the initial-condition term `ν_ℐ‖û(0) − u₀‖²`.
    pub fn ic_component(config: &'a TrainingConfig) -> Result<Self> {
        Self::new(
            &config.network,
            &config.system,
            &[],
            LossWeights {
                residual: Vec::new(),
                initial: config.system.nu_ic,
            },
        )
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: LossWeights) {
        assert_eq!(weights.residual.len(), self.times.len() - 1);
        self.weights = weights;
    }

    fn evaluate<S: Scalar>(&self, params: &[S], with_gradient: bool) -> Result<Evaluation<S>> {
        check_params(self.network, params)?;
        let record = forward_extended(self.network, params, &self.times);
        let out = record.outputs();
        let out_t = record.output_tangents();
        let n = self.system.dim();
        let b = self.times.len();

        let ic_err: Vec<S> = out
            .column(0)
            .iter()
            .zip(&self.system.u0)
            .map(|(&u, &u0)| u - S::from_f64(u0))
            .collect();
        let ic_sq_s = ic_err.iter().fold(S::zero(), |acc, &e| acc + e * e);

        let residual = self
            .system
            .residual_columns(out.slice(s![.., 1..]), out_t.slice(s![.., 1..]));
        let mut residual_sq_s = vec![S::zero(); b - 1];
        for row in residual.axis_iter(Axis(0)) {
            for (acc, &r) in residual_sq_s.iter_mut().zip(row.iter()) {
                *acc += r * r;
            }
        }

        let mut loss = ic_sq_s.scale(self.weights.initial);
        for (&sq, &w) in residual_sq_s.iter().zip(&self.weights.residual) {
            loss += sq.scale(w);
        }
        let terms = PointTerms {
            residual_sq: residual_sq_s.iter().map(|x| x.value()).collect(),
            ic_sq: ic_sq_s.value(),
        };
        if !with_gradient {
            return Ok(Evaluation {
                loss,
                gradient: None,
                terms,
            });
        }

        // Cotangents of [U | U_t]: ∂/∂u_t = 2w r, ∂/∂u = −Aᵀ(2w r).
        let mut out_bar = Array2::<S>::zeros((n, 2 * b));
        let mut r_bar = residual;
        for mut row in r_bar.axis_iter_mut(Axis(0)) {
            for (r, &w) in row.iter_mut().zip(&self.weights.residual) {
                *r = r.scale(2.0 * w);
            }
        }
        let u_bar = self.system.operator.transpose().apply_columns(r_bar.view());
        out_bar.slice_mut(s![.., b + 1..]).assign(&r_bar);
        out_bar
            .slice_mut(s![.., 1..b])
            .zip_mut_with(&u_bar, |o, &x| *o = -x);
        for (i, &e) in ic_err.iter().enumerate() {
            out_bar[[i, 0]] = e.scale(2.0 * self.weights.initial);
        }
        let gradient = backward_extended(self.network, params, &record, out_bar.view());
        Ok(Evaluation {
            loss,
            gradient: Some(gradient),
            terms,
        })
    }

    pub(crate) fn terms(&self, params: &[f64]) -> Result<(f64, PointTerms)> {
        let e = self.evaluate(params, false)?;
        Ok((e.loss, e.terms))
    }

    pub(crate) fn gradient_and_terms(&self, params: &[f64]) -> Result<(f64, Vec<f64>, PointTerms)> {
        let e = self.evaluate(params, true)?;
        Ok((e.loss, e.gradient.expect("requested"), e.terms))
    }
}

impl Differentiable for PinnObjective<'_> {
    fn dim(&self) -> usize {
        param_count(self.network)
    }

    fn value_and_gradient<S: Scalar>(&self, params: &[S]) -> Result<(S, Vec<S>)> {
        let e = self.evaluate(params, true)?;
        Ok((e.loss, e.gradient.expect("requested")))
    }
}

fn components_from_terms(config: &TrainingConfig, terms: &PointTerms) -> LossComponents {
    let w = config.reduction_factor() * config.system.residual_scale;
    let residual_loss = w * terms.residual_sq.iter().sum::<f64>();
    let ic_loss = config.system.nu_ic * terms.ic_sq;
    LossComponents {
        residual_loss,
        ic_loss,
        total: residual_loss + ic_loss,
    }
}

fn check_finite(components: &LossComponents, iteration: usize) -> Result<()> {
    if components.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            iteration,
            detail: format!(
                "residual loss {:e}, initial-condition loss {:e}",
                components.residual_loss, components.ic_loss
            ),
        })
    }
}

/// Uniform loss terms of `params` under `config`.
pub fn loss_components(config: &TrainingConfig, params: &ParamVector) -> Result<LossComponents> {
    config.validate()?;
    let colloc = config.collocation()?;
    let obj = PinnObjective::uniform(config, &colloc.train_points)?;
    let (_, terms) = obj.terms(params.values())?;
    let components = components_from_terms(config, &terms);
    check_finite(&components, 0)?;
    Ok(components)
}

/// Logistic masking function `μ`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sigmoid_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

fn adaptive_weights(config: &TrainingConfig, lambda: &[f64]) -> LossWeights {
    let w = config.reduction_factor() * config.system.residual_scale;
    LossWeights {
        residual: lambda[1..].iter().map(|&l| w * sigmoid(l)).collect(),
        initial: config.system.nu_ic * sigmoid(lambda[0]),
    }
}

fn check_lambda(config: &TrainingConfig, lambda: &[f64]) -> Result<()> {
    if lambda.len() != config.n_points + 1 {
        return Err(Error::Config(format!(
            "expected {} attention weights, got {}",
            config.n_points + 1,
            lambda.len()
        )));
    }
    Ok(())
}

/// Attention-weighted loss `L(w, λ)`; `lambda[0]` weights the initial
/// condition, `lambda[d]` the training point `t_d`.
pub fn adaptive_loss(config: &TrainingConfig, params: &ParamVector, lambda: &[f64]) -> Result<f64> {
    config.validate()?;
    check_lambda(config, lambda)?;
    let colloc = config.collocation()?;
    let obj = PinnObjective::new(
        &config.network,
        &config.system,
        &colloc.train_points,
        adaptive_weights(config, lambda),
    )?;
    let (loss, terms) = obj.terms(params.values())?;
    check_finite(&components_from_terms(config, &terms), 0)?;
    Ok(loss)
}

/// `∂L(w, λ)/∂λ`, component-wise non-negative.
pub fn adaptive_lambda_gradient(
    config: &TrainingConfig,
    params: &ParamVector,
    lambda: &[f64],
) -> Result<Vec<f64>> {
    config.validate()?;
    check_lambda(config, lambda)?;
    let colloc = config.collocation()?;
    let obj = PinnObjective::uniform(config, &colloc.train_points)?;
    let (_, terms) = obj.terms(params.values())?;
    Ok(lambda_gradient(config, lambda, &terms))
}

fn lambda_gradient(config: &TrainingConfig, lambda: &[f64], terms: &PointTerms) -> Vec<f64> {
    let w = config.reduction_factor() * config.system.residual_scale;
    let mut g = Vec::with_capacity(lambda.len());
    g.push(sigmoid_derivative(lambda[0]) * config.system.nu_ic * terms.ic_sq);
    g.extend(
        lambda[1..]
            .iter()
            .zip(&terms.residual_sq)
            .map(|(&l, &sq)| sigmoid_derivative(l) * w * sq),
    );
    g
}

/// Adam moments for one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }

    /// One bias-corrected descent step `w ← w − lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f64], gradient: &[f64], lr: f64) -> Result<()> {
        if gradient.len() != params.len() || params.len() != self.first_moment.len() {
            return Err(Error::Config(
                "Adam state and gradient lengths differ".into(),
            ));
        }
        if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration: self.step as usize,
                detail: format!("non-finite gradient component {i}"),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.step as i32);
        for (((w, &g), m), v) in params
            .iter_mut()
            .zip(gradient)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + Self::EPSILON);
        }
        Ok(())
    }
}

/// Functional form of [`Adam::step`] on a whole [`TrainState`].
pub fn adam_step(mut state: TrainState, gradient: &[f64], lr: f64) -> Result<TrainState> {
    state.adam.step(state.params.values_mut(), gradient, lr)?;
    Ok(state)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParamVector,
    pub adam: Adam,
    /// Attention pre-weights; index 0 is the initial condition.
    pub lambda: Vec<f64>,
    pub lambda_adam: Adam,
}

impl TrainState {
    pub fn new(params: ParamVector, n_points: usize) -> Self {
        let m = params.len();
        Self {
            params,
            adam: Adam::new(m),
            lambda: vec![0.0; n_points + 1],
            lambda_adam: Adam::new(n_points + 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub residual_loss: f64,
    pub ic_loss: f64,
    pub total: f64,
    /// Value of the objective actually descended (weighted when adaptive).
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskSummary>,
}

/// Statistics of `μ(λ)` at one checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSummary {
    pub ic: f64,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl MaskSummary {
    fn of(lambda: &[f64]) -> Self {
        let masks: Vec<f64> = lambda[1..].iter().map(|&l| sigmoid(l)).collect();
        Self {
            ic: sigmoid(lambda[0]),
            min: masks.iter().copied().fold(f64::INFINITY, f64::min),
            mean: masks.iter().sum::<f64>() / masks.len() as f64,
            max: masks.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Outcome of one optimisation step, measured before the update.
#[derive(Clone, Debug)]
pub struct StepInfo {
    pub iteration: usize,
    pub components: LossComponents,
    pub objective: f64,
    /// `‖𝒩(û)(t_d)‖²` per training point.
    pub residual_sq: Vec<f64>,
}

/// Stepwise driver of one training run.
pub struct Trainer {
    config: TrainingConfig,
    collocation: CollocationSet,
    state: TrainState,
    iteration: usize,
}

impl Trainer {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.network, config.seed);
        Self::with_params(config, params)
    }

    pub fn with_params(config: TrainingConfig, params: ParamVector) -> Result<Self> {
        config.validate()?;
        check_params(&config.network, params.values())?;
        let collocation = config.collocation()?;
        let state = TrainState::new(params, config.n_points);
        Ok(Self {
            config,
            collocation,
            state,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn collocation(&self) -> &CollocationSet {
        &self.collocation
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    fn objective(&self) -> Result<PinnObjective<'_>> {
        let weights = match self.config.formulation {
            Formulation::Uniform => {
                let w = self.config.reduction_factor() * self.config.system.residual_scale;
                LossWeights {
                    residual: vec![w; self.config.n_points],
                    initial: self.config.system.nu_ic,
                }
            }
            Formulation::Adaptive => adaptive_weights(&self.config, &self.state.lambda),
        };
        PinnObjective::new(
            &self.config.network,
            &self.config.system,
            &self.collocation.train_points,
            weights,
        )
    }

    /// Descent on `w` (and, when adaptive, ascent on `λ`) from the current state.
    pub fn step(&mut self) -> Result<StepInfo> {
        let obj = self.objective()?;
        let (objective, grad, terms) = obj.gradient_and_terms(self.state.params.values())?;
        let components = components_from_terms(&self.config, &terms);
        check_finite(&components, self.iteration)?;
        if !objective.is_finite() {
            return Err(Error::Divergence {
                iteration: self.iteration,
                detail: format!("objective {objective:e}"),
            });
        }
        let lr = self.config.learning_rate;
        self.state
            .adam
            .step(self.state.params.values_mut(), &grad, lr)
            .map_err(|e| with_iteration(e, self.iteration))?;
        if self.config.formulation == Formulation::Adaptive {
            let ascent: Vec<f64> = lambda_gradient(&self.config, &self.state.lambda, &terms)
                .into_iter()
                .map(|g| -g)
                .collect();
            self.state
                .lambda_adam
                .step(&mut self.state.lambda, &ascent, self.config.lambda_lr)
                .map_err(|e| with_iteration(e, self.iteration))?;
        }
        let info = StepInfo {
            iteration: self.iteration,
            components,
            objective,
            residual_sq: terms.residual_sq,
        };
        self.iteration += 1;
        Ok(info)
    }

    /// Uniform loss terms at the current parameters.
    pub fn current_components(&self) -> Result<LossComponents> {
        let obj = PinnObjective::uniform(&self.config, &self.collocation.train_points)?;
        let (_, terms) = obj.terms(self.state.params.values())?;
        let c = components_from_terms(&self.config, &terms);
        check_finite(&c, self.iteration)?;
        Ok(c)
    }
}

fn with_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::Divergence { detail, .. } => Error::Divergence { iteration, detail },
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub config: TrainingConfig,
    #[serde(skip)]
    pub final_params: ParamVector,
    pub iterations_completed: usize,
    pub loss_curve: Vec<LossRecord>,
    /// Uniform loss terms after the last update (absent if diverged).
    pub final_losses: Option<LossComponents>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_mask: Option<MaskSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<String>,
}

impl TrainReport {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs `config.iterations` steps, logging every [`LOG_EVERY`] iterations.
/// Divergence ends the run early and is recorded in the report.
pub fn train(config: &TrainingConfig) -> Result<TrainReport> {
    let mut trainer = Trainer::new(config.clone())?;
    let adaptive = config.formulation == Formulation::Adaptive;
    let mut loss_curve = Vec::with_capacity(config.iterations / LOG_EVERY + 2);
    let mut divergence = None;

    for it in 0..config.iterations {
        let mask =
            (adaptive && it % LOG_EVERY == 0).then(|| MaskSummary::of(&trainer.state.lambda));
        match trainer.step() {
            Ok(info) => {
                if it % LOG_EVERY == 0 {
                    loss_curve.push(LossRecord {
                        iteration: it,
                        residual_loss: info.components.residual_loss,
                        ic_loss: info.components.ic_loss,
                        total: info.components.total,
                        objective: info.objective,
                        mask,
                    });
                }
            }
            Err(e @ Error::Divergence { .. }) => {
                divergence = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let final_losses = match divergence {
        Some(_) => None,
        None => match trainer.current_components() {
            Ok(c) => Some(c),
            Err(e @ Error::Divergence { .. }) => {
                divergence = Some(e.to_string());
                None
            }
            Err(e) => return Err(e),
        },
    };
    let iterations_completed = trainer.iteration();
    let final_mask = adaptive.then(|| MaskSummary::of(&trainer.state.lambda));
    Ok(TrainReport {
        config: config.clone(),
        final_params: trainer.into_state().params,
        iterations_completed,
        loss_curve,
        final_losses,
        final_mask,
        divergence,
    })
}
