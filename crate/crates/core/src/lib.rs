//! Emulators of dynamical-system simulators.
//!
//! Two families are provided:
//!
//! * **Data-driven** emulators ([`datadriven`]): the training outputs are
//!   factorized into a time basis and per-run coefficients ([`factorization`],
//!   SVD or regularized NMF), the coefficients are interpolated over simulator
//!   parameters with Gaussian processes ([`gp`]) and the basis is linearly
//!   interpolated in time.
//! * **Mechanistic** emulators ([`mem`]): Gaussian processes whose prior is the
//!   law of a linear time-invariant stochastic ODE, one block ("linear proxy")
//!   per simulation run, coupled through a covariance over simulator parameters.
//!
//! The [`dataset`] module generates the didactic nonlinear datasets and a toy
//! nonlinear-reservoir catchment driven by block rain; [`eval`] computes the
//! per-run error metrics and comparison tables.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, timing and the
//! command line live in the `emulate` crate.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

extern crate alloc;

pub mod dataset;
pub mod datadriven;
pub mod error;
pub mod eval;
pub mod factorization;
pub mod gp;
pub mod linalg;
pub mod mem;
pub mod optim;
#[cfg(feature = "serde")]
pub mod serde_f64;
pub mod signal;

pub use error::{Error, ErrorKind, Result};

/// Anything that maps a simulator parameter vector and a set of query times
/// to an emulated output series.
pub trait Emulator {
    fn predict(&self, theta: &[f64], times: &[f64]) -> Result<alloc::vec::Vec<f64>>;
}
