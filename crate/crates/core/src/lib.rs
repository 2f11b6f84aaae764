//! Bias-reduced kernel estimators for functional data.
//!
//! The crate provides
//!
//! - sampled curves, the L2 semimetric and a synthetic curve process ([`curves`]);
//! - one-sided and symmetric kernels ([`kernels`]);
//! - the functional Nadaraya–Watson estimator for regression, conditional
//!   distribution and conditional density ([`estimator`]);
//! - the least-squares bias reducer that combines pilot estimates computed at
//!   several bandwidths ([`biasred`]) and builders for the bandwidth grids
//!   ([`design`]);
//! - numerical evaluation of the asymptotic bias and variance constants
//!   ([`theory`]);
//! - a seeded, thread-count independent Monte Carlo harness ([`sim`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod biasred;
pub mod curves;
pub mod design;
pub mod error;
pub mod estimator;
pub mod kernels;
pub mod quadrature;
pub mod sim;
pub mod theory;

pub use error::{Error, Result};
