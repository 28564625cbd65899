//! Ground-truth trajectories: adaptive Dormand–Prince 5(4) with dense
//! output, and closed-form solutions of both benchmarks.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{heat_eigenvalues, heat_initial_condition, HeatParams, OdeSystem, SystemKind};

pub const DEFAULT_RTOL: f64 = 1e-8;
pub const DEFAULT_ATOL: f64 = 1e-10;

/// Heat systems at or above this size use the spectral solution by default.
pub const SPECTRAL_THRESHOLD: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Rk45,
    ClosedForm,
    Spectral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub kind: SolverKind,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
    pub rtol: f64,
    pub atol: f64,
}

/// States sampled at strictly increasing times; row `i` is `u(times[i])`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Array2<f64>,
    pub info: SolverInfo,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    /// CSV with columns `t, u_1, …, u_N`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("u_{i}")));
        w.write_record(&header)?;
        for (t, row) in self.times.iter().zip(self.states.rows()) {
            let mut rec = vec![format!("{t:e}")];
            rec.extend(row.iter().map(|x| format!("{x:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_eval_points(points: &[f64], horizon: f64) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Parameter("no evaluation points".into()));
    }
    if points.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter(
            "evaluation points must be strictly increasing".into(),
        ));
    }
    // Allow a few ulps of slack at the horizon for points built as k·T/D.
    let slack = 4.0 * f64::EPSILON * horizon;
    if points[0] < 0.0 || points[points.len() - 1] > horizon + slack {
        return Err(Error::Parameter(format!(
            "evaluation points must lie in [0, {horizon}]"
        )));
    }
    Ok(())
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 6] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0];
const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
/// Difference between the embedded 4th-order and the 5th-order weights.
const E: [f64; 7] = [
    -71.0 / 57600.0,
    0.0,
    71.0 / 16695.0,
    -71.0 / 1920.0,
    17253.0 / 339200.0,
    -22.0 / 525.0,
    1.0 / 40.0,
];
/// Quartic continuous extension: `y(t₀ + xh) = y₀ + h Σᵢ kᵢ Σⱼ P[i][j] x^{j+1}`.
const P: [[f64; 4]; 7] = [
    [
        1.0,
        -8048581381.0 / 2820520608.0,
        8663915743.0 / 2820520608.0,
        -12715105075.0 / 11282082432.0,
    ],
    [0.0, 0.0, 0.0, 0.0],
    [
        0.0,
        131558114200.0 / 32700410799.0,
        -68118460800.0 / 10900136933.0,
        87487479700.0 / 32700410799.0,
    ],
    [
        0.0,
        -1754552775.0 / 470086768.0,
        14199869525.0 / 1410260304.0,
        -10690763975.0 / 1880347072.0,
    ],
    [
        0.0,
        127303824393.0 / 49829197408.0,
        -318862633887.0 / 49829197408.0,
        701980252875.0 / 199316789632.0,
    ],
    [
        0.0,
        -282668133.0 / 205662961.0,
        2019193451.0 / 616988883.0,
        -1453857185.0 / 822651844.0,
    ],
    [
        0.0,
        40617522.0 / 29380423.0,
        -110615467.0 / 29380423.0,
        69997945.0 / 29380423.0,
    ],
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ERROR_EXPONENT: f64 = -1.0 / 5.0;

fn rms(x: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = x.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (sum / n.max(1) as f64).sqrt()
}

fn initial_step(
    system: &OdeSystem,
    y0: &[f64],
    f0: &[f64],
    span: f64,
    rtol: f64,
    atol: f64,
) -> f64 {
    let scale: Vec<f64> = y0.iter().map(|y| atol + y.abs() * rtol).collect();
    let d0 = rms(y0.iter().zip(&scale).map(|(y, s)| y / s));
    let d1 = rms(f0.iter().zip(&scale).map(|(f, s)| f / s));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let f1 = system.rhs(h0, &y1);
    let d2 = rms(f1.iter().zip(f0).zip(&scale).map(|((a, b), s)| (a - b) / s)) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Adaptive Dormand–Prince 5(4) integration from `t = 0`, sampled at
/// `eval_points` through the method's quartic dense output.
pub fn rk45_integrate(
    system: &OdeSystem,
    eval_points: &[f64],
    rtol: f64,
    atol: f64,
) -> Result<Trajectory> {
    if !(rtol > 0.0 && atol > 0.0) {
        return Err(Error::Parameter(format!(
            "tolerances must be positive (rtol {rtol}, atol {atol})"
        )));
    }
    check_eval_points(eval_points, system.horizon)?;
    let n = system.dim();
    let mut states = Array2::<f64>::zeros((eval_points.len(), n));
    let mut info = SolverInfo {
        kind: SolverKind::Rk45,
        accepted_steps: 0,
        rejected_steps: 0,
        rhs_evaluations: 0,
        rtol,
        atol,
    };

    let mut next = 0;
    while next < eval_points.len() && eval_points[next] == 0.0 {
        states
            .row_mut(next)
            .assign(&ndarray::ArrayView1::from(&system.u0));
        next += 1;
    }
    let t_end = eval_points[eval_points.len() - 1];
    if next == eval_points.len() {
        return Ok(Trajectory {
            times: eval_points.to_vec(),
            states,
            info,
        });
    }

    let min_step = 1e-14 * system.horizon;
    let mut t = 0.0;
    let mut y = system.u0.clone();
    let mut f = system.rhs(t, &y);
    info.rhs_evaluations += 1;
    let mut h = initial_step(system, &y, &f, t_end, rtol, atol);
    info.rhs_evaluations += 1;
    let mut k = vec![vec![0.0; n]; 7];
    let mut y_new = vec![0.0; n];

    while t < t_end {
        let mut rejected = false;
        loop {
            if h < min_step {
                return Err(Error::Stiffness { time: t, step: h });
            }
            let mut t_new = t + h;
            if t_new >= t_end {
                t_new = t_end;
            }
            let step = t_new - t;

            k[0].copy_from_slice(&f);
            for s in 1..6 {
                let ys: Vec<f64> = (0..n)
                    .map(|i| y[i] + step * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>())
                    .collect();
                k[s] = system.rhs(t + C[s] * step, &ys);
            }
            for i in 0..n {
                y_new[i] = y[i] + step * (0..6).map(|j| B[j] * k[j][i]).sum::<f64>();
            }
            let f_new = system.rhs(t_new, &y_new);
            k[6].copy_from_slice(&f_new);
            info.rhs_evaluations += 6;

            let err = rms((0..n).map(|i| {
                let scale = atol + y[i].abs().max(y_new[i].abs()) * rtol;
                step * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>() / scale
            }));

            if err < 1.0 {
                let factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * err.powf(ERROR_EXPONENT)).min(MAX_FACTOR)
                };
                let factor = if rejected { factor.min(1.0) } else { factor };

                while next < eval_points.len() && eval_points[next] <= t_new {
                    let tp = eval_points[next];
                    let mut row = states.row_mut(next);
                    if tp == t_new {
                        row.assign(&ndarray::ArrayView1::from(&y_new));
                    } else {
                        let x = (tp - t) / step;
                        let powers = [x, x * x, x * x * x, x * x * x * x];
                        for i in 0..n {
                            let mut acc = 0.0;
                            for (kj, pj) in k.iter().zip(&P) {
                                let q: f64 = pj.iter().zip(&powers).map(|(p, xp)| p * xp).sum();
                                acc += kj[i] * q;
                            }
                            row[i] = y[i] + step * acc;
                        }
                    }
                    next += 1;
                }

                t = t_new;
                y.copy_from_slice(&y_new);
                f = f_new;
                h = step * factor;
                info.accepted_steps += 1;
                break;
            }
            h = step * (SAFETY * err.powf(ERROR_EXPONENT)).max(MIN_FACTOR);
            rejected = true;
            info.rejected_steps += 1;
        }
    }

    Ok(Trajectory {
        times: eval_points.to_vec(),
        states,
        info,
    })
}

/// `[−(π/2) sin ωt, (π/2) cos ωt]`, the solution from `u₀ = [0, π/2]`.
pub fn shm_closed_form(omega: f64, t: f64) -> [f64; 2] {
    let (s, c) = (omega * t).sin_cos();
    [-PI / 2.0 * s, PI / 2.0 * c]
}

/// Time derivative of [`shm_closed_form`].
pub fn shm_closed_form_derivative(omega: f64, t: f64) -> [f64; 2] {
    let (s, c) = (omega * t).sin_cos();
    [-PI / 2.0 * omega * c, -PI / 2.0 * omega * s]
}

/// Normalized Toeplitz eigenvectors `vₙ(k) = √(2/(N+1)) sin(nkπ/(N+1))`,
/// one per row.
fn heat_eigenvectors(n_points: usize) -> Array2<f64> {
    let denom = (n_points + 1) as f64;
    let norm = (2.0 / denom).sqrt();
    Array2::from_shape_fn((n_points, n_points), |(n, k)| {
        norm * (((n + 1) * (k + 1)) as f64 * PI / denom).sin()
    })
}

/// Precomputed eigen-expansion of the heat benchmark around its steady
/// state `u_s = 1`.
#[derive(Clone, Debug)]
pub struct HeatSpectral {
    eigenvalues: Vec<f64>,
    eigenvectors: Array2<f64>,
    coefficients: Vec<f64>,
}

impl HeatSpectral {
    pub fn new(params: &HeatParams) -> Result<Self> {
        let n = params.n_points;
        let eigenvalues = heat_eigenvalues(n)?;
        let eigenvectors = heat_eigenvectors(n);
        let deviation: Vec<f64> = heat_initial_condition(n)
            .into_iter()
            .map(|u| u - HeatParams::BOUNDARY)
            .collect();
        let coefficients = eigenvectors
            .rows()
            .into_iter()
            .map(|v| v.iter().zip(&deviation).map(|(a, b)| a * b).sum())
            .collect();
        Ok(Self {
            eigenvalues,
            eigenvectors,
            coefficients,
        })
    }

    /// `(u(t), u̇(t))`.
    pub fn state(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.eigenvalues.len();
        let mut u = vec![HeatParams::BOUNDARY; n];
        let mut du = vec![0.0; n];
        for ((&e, &c), v) in self
            .eigenvalues
            .iter()
            .zip(&self.coefficients)
            .zip(self.eigenvectors.rows())
        {
            let amp = c * (e * t).exp();
            for (k, &vk) in v.iter().enumerate() {
                u[k] += amp * vk;
                du[k] += e * amp * vk;
            }
        }
        (u, du)
    }
}

/// `u(t) = u_s + Σₙ cₙ e^{eₙt} vₙ` for the heat benchmark.
pub fn heat_spectral_solution(params: &HeatParams, t: f64) -> Result<Vec<f64>> {
    Ok(HeatSpectral::new(params)?.state(t).0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceMethod {
    /// RK45, except spectral for heat with `N ≥ 128`.
    #[default]
    Auto,
    Rk45,
    /// Closed form (SHM) or eigen-expansion (heat).
    Exact,
}

/// Reference trajectory of `system` at `points`.
pub fn reference_trajectory(
    system: &OdeSystem,
    points: &[f64],
    method: ReferenceMethod,
    rtol: f64,
    atol: f64,
) -> Result<Trajectory> {
    let use_exact = match (method, system.kind) {
        (ReferenceMethod::Exact, _) => true,
        (ReferenceMethod::Rk45, _) => false,
        (ReferenceMethod::Auto, SystemKind::Heat(p)) => p.n_points >= SPECTRAL_THRESHOLD,
        (ReferenceMethod::Auto, SystemKind::Shm(_)) => false,
    };
    if !use_exact {
        return rk45_integrate(system, points, rtol, atol);
    }
    check_eval_points(points, system.horizon)?;
    let n = system.dim();
    let mut states = Array2::zeros((points.len(), n));
    let kind = match system.kind {
        SystemKind::Shm(p) => {
            for (mut row, &t) in states.rows_mut().into_iter().zip(points) {
                row.assign(&ndarray::arr1(&shm_closed_form(p.omega, t)));
            }
            SolverKind::ClosedForm
        }
        SystemKind::Heat(p) => {
            let spectral = HeatSpectral::new(&p)?;
            for (mut row, &t) in states.rows_mut().into_iter().zip(points) {
                row.assign(&ndarray::Array1::from(spectral.state(t).0));
            }
            SolverKind::Spectral
        }
    };
    Ok(Trajectory {
        times: points.to_vec(),
        states,
        info: SolverInfo {
            kind,
            accepted_steps: 0,
            rejected_steps: 0,
            rhs_evaluations: 0,
            rtol,
            atol,
        },
    })
}
