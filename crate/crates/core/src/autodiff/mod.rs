//! In-house differentiation for the fixed MLP/ResNet topologies.
//!
//! The forward pass propagates every hidden state together with its
//! derivative with respect to the scalar input `t` (the *extended* map
//! `t ↦ (u, u_t)`). Values and input-tangents for a batch of `B` times are
//! stored side by side as `(rows, 2B)` matrices `[H | Ḣ]`, so each layer is a
//! single GEMM. The reverse pass differentiates the extended map with
//! hand-written layer adjoints; instantiating it over [`Dual`] gives exact
//! Hessian-vector products.

mod dual;

pub use dual::{Dual, Scalar};

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::network::{self, layer_views, NetworkConfig, ParamVector};

/// Per-layer intermediates of one extended forward pass.
#[derive(Clone, Debug)]
pub struct LayerRecord<S> {
    /// `[Z | Ż]`: pre-activations and their input-tangents.
    pub pre: Array2<S>,
    /// `[A | Ȧ]`: `tanh` activations and their input-tangents.
    pub act: Array2<S>,
    /// `[H | Ḣ]` after the identity skip; `None` when the layer has no skip
    /// (then the hidden state is `act`).
    pub skip_sum: Option<Array2<S>>,
}

impl<S> LayerRecord<S> {
    pub fn hidden(&self) -> &Array2<S> {
        self.skip_sum.as_ref().unwrap_or(&self.act)
    }
}

/// Workspace for reverse accumulation: everything the adjoint pass needs.
#[derive(Clone, Debug)]
pub struct EvalRecord<S = f64> {
    times: Vec<f64>,
    layers: Vec<LayerRecord<S>>,
    /// `[U | U_t]`, shape `(N, 2B)`.
    output: Array2<S>,
}

impl<S: Scalar> EvalRecord<S> {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn batch(&self) -> usize {
        self.times.len()
    }

    /// One record per hidden layer.
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[LayerRecord<S>] {
        &self.layers
    }

    /// Network outputs `U`, shape `(N, B)`.
    pub fn outputs(&self) -> ArrayView2<'_, S> {
        self.output.slice(s![.., ..self.batch()])
    }

    /// Input derivatives `U_t`, shape `(N, B)`.
    pub fn output_tangents(&self) -> ArrayView2<'_, S> {
        self.output.slice(s![.., self.batch()..])
    }

    /// Recomputes `[U | U_t]` from the stored pre-activations alone.
    pub fn replay(&self, config: &NetworkConfig, params: &[S]) -> Array2<S> {
        let views = layer_views(config, params);
        let b = self.batch();
        let mut prev: Option<Array2<S>> = None;
        for (k, rec) in self.layers.iter().enumerate() {
            let mut act = rec.pre.clone();
            activate(&mut act, b);
            let hidden = match (&prev, config.has_skip(k)) {
                (Some(p), true) => p + &act,
                _ => act,
            };
            prev = Some(hidden);
        }
        let out = &views[config.depth];
        affine(
            out.weight,
            out.bias,
            prev.as_ref().expect("depth >= 1").view(),
            b,
        )
    }
}

/// `W·[H | Ḣ]` with the bias added to the value half only.
fn affine<S: Scalar>(
    weight: ArrayView2<'_, S>,
    bias: ndarray::ArrayView1<'_, S>,
    input: ArrayView2<'_, S>,
    b: usize,
) -> Array2<S> {
    let mut out = S::matmul(weight, input);
    for (mut row, &bi) in out.axis_iter_mut(Axis(0)).zip(bias.iter()) {
        for z in row.slice_mut(s![..b]) {
            *z += bi;
        }
    }
    out
}

/// In place `[Z | Ż] ↦ [tanh Z | (1 − tanh²Z) ⊙ Ż]`.
fn activate<S: Scalar>(m: &mut Array2<S>, b: usize) {
    let one = S::one();
    for mut row in m.axis_iter_mut(Axis(0)) {
        let row = row.as_slice_mut().expect("row-major");
        let (vals, tans) = row.split_at_mut(b);
        for (z, zt) in vals.iter_mut().zip(tans.iter_mut()) {
            let a = z.tanh();
            *z = a;
            *zt = (one - a * a) * *zt;
        }
    }
}

/// Extended forward pass over a batch of times.
///
/// Panics if `params` does not match `config`; use the checked wrappers.
pub fn forward_extended<S: Scalar>(
    config: &NetworkConfig,
    params: &[S],
    times: &[f64],
) -> EvalRecord<S> {
    let views = layer_views(config, params);
    let b = times.len();
    let mut layers: Vec<LayerRecord<S>> = Vec::with_capacity(config.depth);

    // Input layer: z = w·t + b, ż = w.
    let first = &views[0];
    let mut pre = Array2::<S>::zeros((config.width, 2 * b));
    for (i, mut row) in pre.axis_iter_mut(Axis(0)).enumerate() {
        let w = first.weight[[i, 0]];
        let bias = first.bias[i];
        let row = row.as_slice_mut().expect("row-major");
        let (vals, tans) = row.split_at_mut(b);
        for (z, &t) in vals.iter_mut().zip(times) {
            *z = w * S::from_f64(t) + bias;
        }
        tans.fill(w);
    }
    let mut act = pre.clone();
    activate(&mut act, b);
    layers.push(LayerRecord {
        pre,
        act,
        skip_sum: None,
    });

    for k in 1..config.depth {
        let input = layers[k - 1].hidden();
        let pre = affine(views[k].weight, views[k].bias, input.view(), b);
        let mut act = pre.clone();
        activate(&mut act, b);
        let skip_sum = config.has_skip(k).then(|| input + &act);
        layers.push(LayerRecord { pre, act, skip_sum });
    }

    let out = &views[config.depth];
    let output = affine(
        out.weight,
        out.bias,
        layers[config.depth - 1].hidden().view(),
        b,
    );
    EvalRecord {
        times: times.to_vec(),
        layers,
        output,
    }
}

/// Reverse pass of the extended map.
///
/// `output_bar` holds the cotangents `[Ū | Ū_t]` (shape `(N, 2B)`); returns
/// the gradient with respect to the flat parameters.
pub fn backward_extended<S: Scalar>(
    config: &NetworkConfig,
    params: &[S],
    record: &EvalRecord<S>,
    output_bar: ArrayView2<'_, S>,
) -> Vec<S> {
    let views = layer_views(config, params);
    let layout = network::Layout::for_config(config);
    let b = record.batch();
    let mut grad = vec![S::zero(); params.len()];

    let write =
        |grad: &mut Vec<S>, range: std::ops::Range<usize>, src: &mut dyn Iterator<Item = S>| {
            for (g, v) in grad[range].iter_mut().zip(src) {
                *g = v;
            }
        };

    // Output layer.
    let last_hidden = record.layers[config.depth - 1].hidden();
    let out_w = layout.weight(config.depth).range();
    let out_b = layout.bias(config.depth).range();
    let gw = S::matmul(output_bar, last_hidden.t());
    write(&mut grad, out_w, &mut gw.iter().copied());
    write(&mut grad, out_b, &mut row_sums(output_bar, b).into_iter());
    let mut hidden_bar = S::matmul(views[config.depth].weight.t(), output_bar);

    for k in (0..config.depth).rev() {
        let rec = &record.layers[k];
        let pre_bar = activation_backward(&rec.pre, &rec.act, &hidden_bar, b);
        let w_range = layout.weight(k).range();
        let b_range = layout.bias(k).range();
        if k == 0 {
            // ∂/∂w of (w·t + b, w): Σⱼ z̄ⱼ tⱼ + ż̄ⱼ.
            let mut gw = Vec::with_capacity(config.width);
            for row in pre_bar.axis_iter(Axis(0)) {
                let row = row.as_slice().expect("row-major");
                let (vals, tans) = row.split_at(b);
                let mut acc = S::zero();
                for ((&zb, &zdb), &t) in vals.iter().zip(tans).zip(&record.times) {
                    acc += zb * S::from_f64(t) + zdb;
                }
                gw.push(acc);
            }
            write(&mut grad, w_range, &mut gw.into_iter());
            write(
                &mut grad,
                b_range,
                &mut row_sums(pre_bar.view(), b).into_iter(),
            );
        } else {
            let input = record.layers[k - 1].hidden();
            let gw = S::matmul(pre_bar.view(), input.t());
            write(&mut grad, w_range, &mut gw.iter().copied());
            write(
                &mut grad,
                b_range,
                &mut row_sums(pre_bar.view(), b).into_iter(),
            );
            let mut input_bar = S::matmul(views[k].weight.t(), pre_bar.view());
            if config.has_skip(k) {
                input_bar += &hidden_bar;
            }
            hidden_bar = input_bar;
        }
    }
    grad
}

fn row_sums<S: Scalar>(m: ArrayView2<'_, S>, b: usize) -> Vec<S> {
    m.axis_iter(Axis(0))
        .map(|row| row.slice(s![..b]).iter().fold(S::zero(), |acc, &x| acc + x))
        .collect()
}

/// Adjoint of `[Z | Ż] ↦ [A | Ȧ]` with `A = tanh Z`, `Ȧ = (1 − A²) Ż`.
fn activation_backward<S: Scalar>(
    pre: &Array2<S>,
    act: &Array2<S>,
    act_bar: &Array2<S>,
    b: usize,
) -> Array2<S> {
    let one = S::one();
    let two = S::from_f64(2.0);
    let mut pre_bar = Array2::<S>::zeros(pre.raw_dim());
    let rows = pre
        .axis_iter(Axis(0))
        .zip(act.axis_iter(Axis(0)))
        .zip(act_bar.axis_iter(Axis(0)))
        .zip(pre_bar.axis_iter_mut(Axis(0)));
    for (((pre_row, act_row), bar_row), mut out_row) in rows {
        let zt = &pre_row.to_slice().expect("row-major")[b..];
        let a = &act_row.to_slice().expect("row-major")[..b];
        let bar = bar_row.to_slice().expect("row-major");
        let (a_bar, at_bar) = bar.split_at(b);
        let out = out_row.as_slice_mut().expect("row-major");
        let (z_bar, zt_bar) = out.split_at_mut(b);
        for j in 0..b {
            let s = one - a[j] * a[j];
            let s_bar = zt[j] * at_bar[j];
            zt_bar[j] = s * at_bar[j];
            z_bar[j] = s * (a_bar[j] - two * a[j] * s_bar);
        }
    }
    pre_bar
}

/// Network output and its time derivative at a single `t`, seeded with
/// input tangent 1.
pub fn eval_with_input_tangent(
    config: &NetworkConfig,
    params: &ParamVector,
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>, EvalRecord<f64>)> {
    network::check_params(config, params.values())?;
    let record = forward_extended(config, params.values(), &[t]);
    let u = record.outputs().column(0).to_vec();
    let u_t = record.output_tangents().column(0).to_vec();
    Ok((u, u_t, record))
}

/// Loss value with its exact gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct GradResult {
    pub loss_value: f64,
    pub gradient: Vec<f64>,
}

/// A twice-differentiable scalar function of the flat parameters whose
/// value and gradient are written once, generically over [`Scalar`].
///
/// Evaluated on `f64` this is the ordinary reverse pass; evaluated on
/// [`Dual`] numbers seeded with a direction it differentiates the reverse
/// pass itself.
pub trait Differentiable: Sync {
    fn dim(&self) -> usize;

    fn value_and_gradient<S: Scalar>(&self, params: &[S]) -> Result<(S, Vec<S>)>;
}

/// Object-safe face of [`Differentiable`].
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn gradient(&self, params: &[f64]) -> Result<GradResult>;

    /// `(∇²L)(w)·v` as the directional derivative of the gradient along `v`.
    fn hessian_vector(&self, params: &[f64], v: &[f64]) -> Result<Vec<f64>>;
}

impl<T: Differentiable> Objective for T {
    fn dim(&self) -> usize {
        Differentiable::dim(self)
    }

    fn gradient(&self, params: &[f64]) -> Result<GradResult> {
        let (loss_value, gradient) = self.value_and_gradient(params)?;
        Ok(GradResult {
            loss_value,
            gradient,
        })
    }

    fn hessian_vector(&self, params: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let seeded: Vec<Dual> = params
            .iter()
            .zip(v)
            .map(|(&w, &d)| Dual::new(w, d))
            .collect();
        let (_, grad) = self.value_and_gradient(&seeded)?;
        Ok(grad.into_iter().map(|g| g.tangent).collect())
    }
}

fn euclidean_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_len(loss: &dyn Objective, params: &[f64]) -> Result<()> {
    if params.len() != loss.dim() {
        return Err(Error::Config(format!(
            "objective takes {} parameters, got {}",
            loss.dim(),
            params.len()
        )));
    }
    Ok(())
}

/// Loss value and gradient; a non-finite loss is reported with the
/// parameter norm at which it occurred.
pub fn grad_loss(loss: &dyn Objective, params: &[f64]) -> Result<GradResult> {
    check_len(loss, params)?;
    let result = loss.gradient(params)?;
    if !result.loss_value.is_finite() {
        return Err(Error::NumericalOverflow {
            param_norm: euclidean_norm(params),
        });
    }
    Ok(result)
}

/// Hessian-vector product by forward-over-reverse differentiation.
pub fn hvp(loss: &dyn Objective, params: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_len(loss, params)?;
    if v.len() != params.len() {
        return Err(Error::Config(format!(
            "direction has length {} but the objective takes {}",
            v.len(),
            params.len()
        )));
    }
    let hv = loss.hessian_vector(params, v)?;
    if hv.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalOverflow {
            param_norm: euclidean_norm(params),
        });
    }
    Ok(hv)
}

/// `½ wᵀQw + bᵀw + c` with symmetric `Q`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    q: Array2<f64>,
    linear: Vec<f64>,
    constant: f64,
}

impl Quadratic {
    pub fn new(q: Array2<f64>, linear: Vec<f64>, constant: f64) -> Result<Self> {
        let m = q.nrows();
        if q.ncols() != m || linear.len() != m {
            return Err(Error::Config(
                "quadratic form has inconsistent shapes".into(),
            ));
        }
        if q.iter().zip(q.t().iter()).any(|(a, b)| a != b) {
            return Err(Error::Config("quadratic form must be symmetric".into()));
        }
        Ok(Self {
            q,
            linear,
            constant,
        })
    }

    /// `Σ aᵢ wᵢ²`.
    pub fn diagonal(a: &[f64]) -> Self {
        let q = Array2::from_diag(&ndarray::Array1::from(
            a.iter().map(|x| 2.0 * x).collect::<Vec<_>>(),
        ));
        Self {
            q,
            linear: vec![0.0; a.len()],
            constant: 0.0,
        }
    }

    pub fn constant(m: usize, c: f64) -> Self {
        Self {
            q: Array2::zeros((m, m)),
            linear: vec![0.0; m],
            constant: c,
        }
    }

    pub fn trace(&self) -> f64 {
        self.q.diag().sum()
    }
}

impl Differentiable for Quadratic {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn value_and_gradient<S: Scalar>(&self, params: &[S]) -> Result<(S, Vec<S>)> {
        let mut value = S::from_f64(self.constant);
        let mut grad = Vec::with_capacity(params.len());
        for (i, row) in self.q.axis_iter(Axis(0)).enumerate() {
            let mut qw = S::from_f64(self.linear[i]);
            for (&qij, &wj) in row.iter().zip(params) {
                qw += wj.scale(qij);
            }
            value += params[i] * (qw + S::from_f64(self.linear[i])).scale(0.5);
            grad.push(qw);
        }
        Ok((value, grad))
    }
}
