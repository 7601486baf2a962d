//! Bayesian estimation of the stochastic volatility model with leverage.
//!
//! Four MCMC strategies are provided:
//!
//! - `AUX`: auxiliary mixture sampler with a collapsed Laplace-proposal
//!   independence step for `(phi, rho, sigma)`,
//! - `RWMH-C` / `RWMH-N`: random-walk Metropolis on the transformed
//!   parameters under the centered or non-centered parameterization, with
//!   the latent path proposed from the auxiliary model and corrected by an
//!   MH step,
//! - `RWMH-ASISxK`: the centered sampler interweaved K times per sweep with
//!   non-centered parameter moves.

pub mod diagnostics;
pub mod error;
pub mod geweke;
pub mod harness;
pub mod io;
pub mod kalman;
pub mod mixture;
pub mod model;
pub mod optim;
pub mod rng;
pub mod samplers;

pub use error::{Error, Result};
