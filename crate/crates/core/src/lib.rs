//! Bayesian identification of polynomial ODE systems from noisy time series.
//!
//! The crate trains activation-free polynomial networks as the right-hand
//! side of an ODE (so the learned dynamics are exactly multivariate
//! polynomials), differentiates through the integrator with a reverse-mode
//! tape, and turns weight-space posteriors (Laplace, HMC/NUTS, variational)
//! into posteriors over interpretable monomial coefficients.

pub mod benchmarks;
pub mod error;
pub mod gpr;
pub mod inference;
pub mod matrix;
pub mod nd;
pub mod odeint;
pub mod opt;
pub mod polynet;
pub mod symexpand;

pub use error::{Error, Result};
