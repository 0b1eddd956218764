//! Preconditioned gradient descent for small multilayer perceptrons:
//! exact Jacobians, Levenberg-Marquardt / Gauss-Newton / generalized
//! Gauss-Newton steps, first-order baselines, spectral diagnostics and a
//! reproducible experiment harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod loss;
pub mod models;
pub mod optim;
pub mod spectral;
pub mod tasks;
mod par;
pub mod tensor;

pub use error::{Error, Result};
