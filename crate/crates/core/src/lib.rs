//! Physics-informed neural networks for coupled ODE systems of tunable
//! complexity, with classical reference solvers and Hessian-trace
//! (loss-Laplacian) diagnostics.

pub mod autodiff;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod network;
pub mod ode;
pub mod reference;
pub mod training;

pub use error::{Error, Result};
