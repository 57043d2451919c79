//! Reliability analysis of stochastic simulators.
//!
//! A stochastic simulator returns a different output at every run for a
//! fixed input, because of latent randomness. This crate fits two families of
//! stochastic emulators on replication-free data, generalized lambda models
//! ([`glam`]) and stochastic polynomial chaos expansions ([`spce`]), derives
//! the conditional failure probability s(x) = P(g(x, Z) ≤ 0) from them
//! semi-analytically, and estimates failure probabilities with the
//! estimators in [`reliability`].

// NaN-rejecting comparisons are written as `!(a >= b)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod dataset;
pub mod emulator;
pub mod error;
pub mod glam;
pub mod gld;
pub mod inputs;
pub mod matrix;
pub mod normal;
pub mod optim;
mod par;
pub mod pce;
pub mod quad;
pub mod reliability;
pub mod rng;
pub mod spce;
mod stats;

pub use dataset::Dataset;
pub use emulator::Emulator;
pub use error::{Error, Result};
pub use inputs::{lhs_sample, lognormal_from_moments, mc_sample, Marginal, RandomVector};
pub use matrix::{least_squares, LeastSquares, Matrix};
pub use par::configure_threads;
