//! Data-driven solution of Merton's expected-utility portfolio problem via
//! Gaussian policy randomization and continuous-time actor-critic learning.
//!
//! The crate is organized around the pipeline of a simulation/empirical study:
//!
//! - [`market`]: stock/factor/variance simulators and the wealth recursion;
//! - [`policy`]: the Gaussian policy class and its mean-function parameterizations;
//! - [`value`]: critic parameterizations with exact parameter gradients;
//! - [`nn`]: a small feed-forward network with manual reverse-mode gradients;
//! - [`oracle`]: closed-form ground-truth solutions, well-posedness checks and
//!   equivalent-relative-wealth-loss (ERWL) formulas;
//! - [`learner`]: online and offline actor-critic updates, the projected policy
//!   iteration for the Black-Scholes market, and the ERM baseline gradient;
//! - [`baselines`]: buy-and-hold and the estimate-then-plug-in method backed by
//!   an Euler maximum-likelihood estimator;
//! - [`evaluation`]: test-set utilities, performance metrics and the packaged
//!   experiments (convergence study, simulation comparison, ERM comparison);
//! - [`backtest`]: the CSV-driven empirical protocol with no-leverage truncation.

pub mod backtest;
pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod learner;
pub mod market;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod value;

pub use error::{MertonError, Result};
