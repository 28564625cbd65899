//! Benchmark ODE systems `u̇ = A·u + f` and their conditioning.
//!
//! Both benchmarks are affine with a tridiagonal generator: simple harmonic
//! motion (`N = 2`, antisymmetric `A`) and the method-of-lines heat equation
//! (symmetric tridiagonal Toeplitz `A`). The residual convention is
//! `𝒩(u)(t) = u_t − A·u − f`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

/// Banded matrix stored as its three diagonals and applied matrix-free.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tridiagonal {
    /// `A[i+1, i]`, length `N − 1`.
    pub sub: Vec<f64>,
    /// `A[i, i]`, length `N`.
    pub diag: Vec<f64>,
    /// `A[i, i+1]`, length `N − 1`.
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(sub: Vec<f64>, diag: Vec<f64>, sup: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        if n == 0 || sub.len() + 1 != n || sup.len() + 1 != n {
            return Err(Error::Parameter(
                "inconsistent tridiagonal band lengths".into(),
            ));
        }
        Ok(Self { sub, diag, sup })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn transpose(&self) -> Self {
        Self {
            sub: self.sup.clone(),
            diag: self.diag.clone(),
            sup: self.sub.clone(),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.dim();
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            a[[i, i]] = self.diag[i];
            if i + 1 < n {
                a[[i + 1, i]] = self.sub[i];
                a[[i, i + 1]] = self.sup[i];
            }
        }
        a
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * u[i];
                if i > 0 {
                    acc += self.sub[i - 1] * u[i - 1];
                }
                if i + 1 < n {
                    acc += self.sup[i] * u[i + 1];
                }
                acc
            })
            .collect()
    }

    /// `A·U` for a state matrix with one column per time point.
    pub fn apply_columns<S: Scalar>(&self, u: ArrayView2<'_, S>) -> Array2<S> {
        let n = self.dim();
        let mut out = Array2::<S>::zeros(u.raw_dim());
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            row.zip_mut_with(&u.row(i), |o, &x| *o = x.scale(self.diag[i]));
            if i > 0 {
                let c = self.sub[i - 1];
                row.zip_mut_with(&u.row(i - 1), |o, &x| *o += x.scale(c));
            }
            if i + 1 < n {
                let c = self.sup[i];
                row.zip_mut_with(&u.row(i + 1), |o, &x| *o += x.scale(c));
            }
        }
        out
    }

    /// Largest absolute row sum, an upper bound on the spectral norm.
    pub fn inf_norm(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| {
                self.diag[i].abs()
                    + if i > 0 { self.sub[i - 1].abs() } else { 0.0 }
                    + if i + 1 < n { self.sup[i].abs() } else { 0.0 }
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Shm,
    Heat,
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Benchmark::Shm => "shm",
            Benchmark::Heat => "heat",
        })
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shm" => Ok(Benchmark::Shm),
            "heat" => Ok(Benchmark::Heat),
            other => Err(Error::Config(format!(
                "unknown benchmark `{other}` (expected shm or heat)"
            ))),
        }
    }
}

/// Simple harmonic motion with the fixed initial condition `[0, π/2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShmParams {
    pub omega: f64,
    pub horizon: f64,
}

impl ShmParams {
    pub const U0: [f64; 2] = [0.0, PI / 2.0];
}

/// Method-of-lines heat equation on `(0, 1)` with `g(x) = sin(2πx) + 1`
/// and unit Dirichlet boundaries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatParams {
    pub n_points: usize,
    pub horizon: f64,
}

impl HeatParams {
    pub const HORIZON: f64 = 0.1;
    pub const BOUNDARY: f64 = 1.0;

    pub fn new(n_points: usize) -> Self {
        Self {
            n_points,
            horizon: Self::HORIZON,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemKind {
    Shm(ShmParams),
    Heat(HeatParams),
}

/// Which loss term absorbs the operator-norm scaling of the heat benchmark.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScaling {
    /// `ν_ℐ = ‖A‖₂` multiplies the initial-condition error.
    #[default]
    InitialCondition,
    /// `ν_ℐ = 1` and the residual is divided by `‖A‖₂` (its square weights
    /// the squared residual).
    Residual,
}

impl FromStr for NormScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ic" | "initial_condition" => Ok(NormScaling::InitialCondition),
            "residual" => Ok(NormScaling::Residual),
            other => Err(Error::Config(format!(
                "unknown norm scaling `{other}` (expected ic or residual)"
            ))),
        }
    }
}

/// Compact serialized form of an [`OdeSystem`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemDescriptor {
    #[serde(flatten)]
    pub kind: SystemKind,
    #[serde(default)]
    pub norm_scaling: NormScaling,
}

impl SystemDescriptor {
    pub fn build(&self) -> Result<OdeSystem> {
        let system = match self.kind {
            SystemKind::Shm(p) => make_shm(p.omega, p.horizon)?,
            SystemKind::Heat(p) => make_heat(p.n_points, p.horizon)?,
        };
        Ok(system.with_norm_scaling(self.norm_scaling))
    }
}

impl From<OdeSystem> for SystemDescriptor {
    fn from(system: OdeSystem) -> Self {
        Self {
            kind: system.kind,
            norm_scaling: system.norm_scaling,
        }
    }
}

impl TryFrom<SystemDescriptor> for OdeSystem {
    type Error = Error;

    fn try_from(desc: SystemDescriptor) -> Result<Self> {
        desc.build()
    }
}

/// A first-order affine system `u̇ = A·u + f` on `(0, T)` with `u(0) = u₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "SystemDescriptor", try_from = "SystemDescriptor")]
pub struct OdeSystem {
    pub kind: SystemKind,
    pub norm_scaling: NormScaling,
    pub horizon: f64,
    pub u0: Vec<f64>,
    /// Weight `ν_ℐ` of the initial-condition term.
    pub nu_ic: f64,
    /// Multiplier on the squared residual (1 unless residual scaling is on).
    pub residual_scale: f64,
    pub operator: Tridiagonal,
    pub forcing: Vec<f64>,
}

impl OdeSystem {
    pub fn dim(&self) -> usize {
        self.u0.len()
    }

    pub fn benchmark(&self) -> Benchmark {
        match self.kind {
            SystemKind::Shm(_) => Benchmark::Shm,
            SystemKind::Heat(_) => Benchmark::Heat,
        }
    }

    /// `𝒩(u)(t) = u_t − A·u − f`.
    pub fn residual(&self, _t: f64, u: &[f64], u_t: &[f64]) -> Vec<f64> {
        let au = self.operator.apply(u);
        u_t.iter()
            .zip(au)
            .zip(&self.forcing)
            .map(|((ut, au), f)| ut - au - f)
            .collect()
    }

    /// Right-hand side `A·u + f`.
    pub fn rhs(&self, _t: f64, u: &[f64]) -> Vec<f64> {
        self.operator
            .apply(u)
            .into_iter()
            .zip(&self.forcing)
            .map(|(au, f)| au + f)
            .collect()
    }

    /// Residuals for a batch: columns of `u`, `u_t` are time points.
    pub fn residual_columns<S: Scalar>(
        &self,
        u: ArrayView2<'_, S>,
        u_t: ArrayView2<'_, S>,
    ) -> Array2<S> {
        let mut r = self.operator.apply_columns(u);
        for ((mut row, ut_row), &f) in r
            .axis_iter_mut(Axis(0))
            .zip(u_t.axis_iter(Axis(0)))
            .zip(&self.forcing)
        {
            let f = S::from_f64(f);
            row.zip_mut_with(&ut_row, |r, &ut| *r = ut - *r - f);
        }
        r
    }

    /// The same system with the operator-norm scaling moved to the residual.
    pub fn with_norm_scaling(mut self, scaling: NormScaling) -> Self {
        if let SystemKind::Heat(p) = self.kind {
            let norm = heat_operator_norm(p.n_points);
            self.norm_scaling = scaling;
            match scaling {
                NormScaling::InitialCondition => {
                    self.nu_ic = norm;
                    self.residual_scale = 1.0;
                }
                NormScaling::Residual => {
                    self.nu_ic = 1.0;
                    self.residual_scale = 1.0 / (norm * norm);
                }
            }
        }
        self
    }
}

/// SHM generator `A = [[0, −ω], [ω, 0]]`, `ν_ℐ = 1`.
pub fn make_shm(omega: f64, horizon: f64) -> Result<OdeSystem> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::Parameter(format!(
            "omega must be positive, got {omega}"
        )));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Parameter(format!(
            "T must be positive, got {horizon}"
        )));
    }
    Ok(OdeSystem {
        kind: SystemKind::Shm(ShmParams { omega, horizon }),
        norm_scaling: NormScaling::InitialCondition,
        horizon,
        u0: ShmParams::U0.to_vec(),
        nu_ic: 1.0,
        residual_scale: 1.0,
        operator: Tridiagonal::new(vec![omega], vec![0.0, 0.0], vec![-omega])?,
        forcing: vec![0.0, 0.0],
    })
}

/// Heat equation discretized on `N` grid points, `ν_ℐ = ‖A‖₂`.
pub fn make_heat(n_points: usize, horizon: f64) -> Result<OdeSystem> {
    check_heat_size(n_points)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Parameter(format!(
            "T must be positive, got {horizon}"
        )));
    }
    let c = grid_scale(n_points);
    let mut forcing = vec![0.0; n_points];
    forcing[0] = c * HeatParams::BOUNDARY;
    forcing[n_points - 1] = c * HeatParams::BOUNDARY;
    Ok(OdeSystem {
        kind: SystemKind::Heat(HeatParams { n_points, horizon }),
        norm_scaling: NormScaling::InitialCondition,
        horizon,
        u0: heat_initial_condition(n_points),
        nu_ic: heat_operator_norm(n_points),
        residual_scale: 1.0,
        operator: heat_operator(n_points),
        forcing,
    })
}

fn check_heat_size(n_points: usize) -> Result<()> {
    if n_points < 3 {
        return Err(Error::Parameter(format!(
            "heat discretization needs at least 3 points, got {n_points}"
        )));
    }
    Ok(())
}

/// `(N − 1)² = 1/Δx²`.
fn grid_scale(n_points: usize) -> f64 {
    let h = (n_points - 1) as f64;
    h * h
}

pub fn heat_operator(n_points: usize) -> Tridiagonal {
    let c = grid_scale(n_points);
    Tridiagonal {
        sub: vec![c; n_points - 1],
        diag: vec![-2.0 * c; n_points],
        sup: vec![c; n_points - 1],
    }
}

/// `u₀ₙ = g((n − 1)/(N − 1))`, `g(x) = sin(2πx) + 1`.
pub fn heat_initial_condition(n_points: usize) -> Vec<f64> {
    let h = (n_points - 1) as f64;
    (0..n_points)
        .map(|n| (2.0 * PI * n as f64 / h).sin() + 1.0)
        .collect()
}

/// Closed-form eigenvalues `eₙ = −2(N−1)²(1 − cos(nπ/(N+1)))`, `n = 1..N`.
pub fn heat_eigenvalues(n_points: usize) -> Result<Vec<f64>> {
    check_heat_size(n_points)?;
    let c = grid_scale(n_points);
    let denom = (n_points + 1) as f64;
    Ok((1..=n_points)
        .map(|n| -2.0 * c * (1.0 - (n as f64 * PI / denom).cos()))
        .collect())
}

/// `κ_N = |e_N| / |e₁|`.
pub fn heat_condition_number(n_points: usize) -> Result<f64> {
    let e = heat_eigenvalues(n_points)?;
    Ok(e[n_points - 1].abs() / e[0].abs())
}

/// `‖A‖₂ = max |eₙ| = |e_N|`.
pub fn heat_operator_norm(n_points: usize) -> f64 {
    let c = grid_scale(n_points);
    2.0 * c * (1.0 - (n_points as f64 * PI / (n_points + 1) as f64).cos())
}
