//! Adaptive Bayesian quantum frequency estimation (ABQFE) for GHZ-state
//! atomic clocks.
//!
//! The crate is organised bottom-up:
//!
//! - [`spin_oracle`]: exact Dicke-basis density-matrix simulator, used as a
//!   brute-force reference for every analytic probability.
//! - [`likelihood`]: single-shot and binomial Ramsey likelihoods, contrast model.
//! - [`bayes`]: grid posterior, Bayesian update, moments, re-windowing.
//! - [`scheme`]: cascaded-ensemble resources, interrogation-time policy,
//!   theoretical deviation curves, Fisher information and Cramér-Rao bound.
//! - [`abqfe`]: the adaptive loop, frequentist baselines and clock locking.
//! - [`stats`]: exhaustive RMSE, Monte Carlo aggregates, Allan deviation.
//! - [`config`] and [`experiments`]: the experiment runner behind the CLI.
//!
//! Frequencies handled by the estimator are offsets in Hz from a nominal
//! reference frequency (the clock frequency of the configuration). Working
//! in offsets keeps sub-Hz grid spacing representable in `f64`; only the
//! fractional frequency `y` refers back to the absolute clock frequency.

pub mod abqfe;
pub mod bayes;
pub mod config;
pub mod error;
pub mod experiments;
pub mod likelihood;
pub mod scheme;
pub mod spin_oracle;
pub mod stats;

pub use error::{Error, Result};
