//! No-U-Turn Hamiltonian Monte Carlo with multi-chain orchestration and
//! convergence diagnostics.
//!
//! Each chain uses multinomial trajectory sampling, the generalised no-U-turn
//! criterion, dual-averaging step-size adaptation and windowed diagonal
//! metric adaptation during warmup. Chain `c` draws from the ChaCha stream
//! `c` of the master seed, so changing the chain count never perturbs other
//! chains.

mod adapt;
mod diagnostics;
mod draws;
mod nuts;

pub use diagnostics::{ess, ess_and_mcse, mcse_sd, split_rhat, ParamDiagnostics, RHAT_THRESHOLD};
pub use draws::{ChainStats, PosteriorDraws, Verdict};
pub use nuts::{check_gradient, nuts_sample, GradientCheck};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A log density on unconstrained coordinates, including any Jacobian terms,
/// together with the map to reported (constrained) quantities.
pub trait TargetDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns the log density at `x` and writes its gradient into `grad`.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Names of the reported quantities, in the order produced by
    /// [`TargetDensity::constrain`].
    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{}]", i + 1)).collect()
    }

    /// Reported quantities at the unconstrained point `x`.
    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_density_grad(x, grad)
    }
    fn param_names(&self) -> Vec<String> {
        (**self).param_names()
    }
    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        (**self).constrain(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub iters: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    pub seed: u64,
    /// Initial points are drawn uniformly from `(-r, r)` per coordinate.
    pub init_radius: f64,
    /// Compare the gradient with finite differences at each chain's initial point.
    pub gradient_check: bool,
    /// Run chains on the rayon pool.
    pub parallel: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 1000,
            iters: 1000,
            target_accept: 0.8,
            max_depth: 10,
            seed: 20_161_018,
            init_radius: 2.0,
            gradient_check: true,
            parallel: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.chains == 0 {
            errs.push("chains must be positive".to_string());
        }
        if self.iters == 0 {
            errs.push("iters must be positive".to_string());
        }
        if self.max_depth == 0 {
            errs.push("max_depth must be positive".to_string());
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            errs.push(format!("target_accept must lie in (0, 1), got {}", self.target_accept));
        }
        if !(self.init_radius > 0.0) {
            errs.push(format!("init_radius must be positive, got {}", self.init_radius));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Fits a model to data: builds the target, samples every chain from
/// jittered initial points and attaches diagnostics and the convergence
/// verdict.
pub fn run_chains(
    spec: &crate::models::ModelSpec,
    data: &crate::models::ModelData,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    let target = crate::models::build_target(spec, data)?;
    nuts_sample(target.as_ref(), config)
}
