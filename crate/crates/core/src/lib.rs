//! Bayesian hierarchical aggregation of evidence from multi-site randomized
//! experiments.
//!
//! The crate fits five hierarchical model families (a Rubin-style summary
//! model, a joint mean/effect summary model, full-data models with joint or
//! independent parents, a household-covariate interactions model and a
//! site-covariate Ridge model) with an in-crate NUTS sampler, and reports
//! pooling metrics, posterior-predictive next-site effects and quantile tables.
//!
//! Module map:
//!
//! - [`data`]: loading, validation and reshaping of experiment data.
//! - [`distributions`]: log densities with analytic gradients.
//! - [`transform`]: constrained/unconstrained parameter maps with Jacobians.
//! - [`sampler`]: NUTS, multi-chain orchestration and convergence diagnostics.
//! - [`models`]: log-posterior kernels for each model family.
//! - [`analysis`]: pooling metrics, predictive inference, quantile tables, OLS.
//! - [`oracle`]: quadrature posteriors, synthetic data and simulation-based calibration.
//! - [`config`] and [`pipeline`]: the batch front door used by the `bhm` binary.

pub mod analysis;
pub mod config;
pub mod data;
pub mod distributions;
pub mod error;
pub mod models;
pub mod oracle;
pub mod pipeline;
pub mod sampler;
pub mod transform;

pub use error::{Error, Result};
