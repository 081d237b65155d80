//! Estimation and honest inference for high-dimensional single-index
//! optimal treatment regimes.
//!
//! The treatment-covariate interaction is modeled as `f0(x'beta)` with an
//! unknown link `f0` and `beta_1 = 1`. The crate fits `beta` by a penalized
//! profiled estimating equation with kernel-smoothed nuisance functions,
//! debiases it with a nodewise Dantzig approximate inverse, and tests groups
//! of coefficients with a Gaussian multiplier bootstrap.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bootstrap;
pub mod cli;
pub mod data;
pub mod debias;
pub mod error;
pub mod estimator;
pub mod kernel;
pub mod lp;
pub mod observational;
pub mod rng;
pub mod simulation;

pub use data::{Coefficient, Dataset, ModifiedResponse, ResponseMode};
pub use error::{Error, Result};
pub use estimator::{EstimatorConfig, FitResult};
