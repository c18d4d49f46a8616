//! Maximum-entropy reconstruction of distributions over d-bit states.
//!
//! Given exact or empirical first/second moments of an unknown distribution
//! on {0,1}^d, the library fits the exponential-family (Ising-type) model
//! q(x|λ) = exp(λ·φ(x)) whose moments match, without ever enumerating the
//! state space:
//!
//! * [`model`] — bit states, feature maps, natural parameters, and a
//!   brute-force enumeration oracle for ground truth at small d;
//! * [`smc`] — the SMC sampler over an annealing schedule of partial
//!   constraints, the resampling-free AIS variant, and unbiased
//!   normalizing-constant estimators;
//! * [`solver`] — Robbins-Monro root finding for the moment-matching
//!   conditions, driven by a fresh SMC estimate per iteration;
//! * [`debias`] — randomized-truncation (single- and multi-term) unbiased
//!   estimators of normalized expectations from coupled AIS runs;
//! * [`sgld`] — stochastic-gradient Langevin dynamics on the Bayesian
//!   posterior over λ with the debiased gradient;
//! * [`harness`] — data simulation, file formats, and the experiment
//!   runners behind the `maxent` CLI.
//!
//! Everything stochastic takes an explicit [`rng::StreamSeed`]; identical
//! seeds give bit-identical results.

pub mod debias;
pub mod error;
pub mod harness;
pub mod model;
pub mod rng;
pub mod sgld;
pub mod smc;
pub mod solver;

pub use error::{Error, Result};
