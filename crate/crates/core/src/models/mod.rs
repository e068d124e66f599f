//! Log-posterior kernels for the hierarchical model families.
//!
//! Every kernel works on an unconstrained parameter vector and includes the
//! log-Jacobian of its transforms. Site effects are non-centred by default: a
//! site's `(mu_k, tau_k)` is the parent mean plus `diag(theta) L_Omega z_k`
//! with standard-normal innovations `z_k`. Every family except the
//! interactions model can also be sampled centred, with the site effects as
//! free coordinates. Gaussian likelihoods are evaluated from per-block
//! sufficient statistics.

mod bivariate;
mod interactions;
mod rubin;

pub use bivariate::BivariateModel;
pub use interactions::InteractionsModel;
pub use rubin::{rubin_conditional_site_mean, RubinModel};

use serde::{Deserialize, Serialize};

use crate::data::{CellDataset, MicroDataset, SiteCovariateTable, SummaryDataset};
use crate::error::{Error, Result};
use crate::sampler::TargetDensity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    RubinSummary,
    JointSummary,
    FullDataJoint,
    FullDataIndependent,
    Interactions,
    SiteRidge,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 6] = [
        ModelFamily::RubinSummary,
        ModelFamily::JointSummary,
        ModelFamily::FullDataJoint,
        ModelFamily::FullDataIndependent,
        ModelFamily::Interactions,
        ModelFamily::SiteRidge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::RubinSummary => "rubin_summary",
            ModelFamily::JointSummary => "joint_summary",
            ModelFamily::FullDataJoint => "full_data_joint",
            ModelFamily::FullDataIndependent => "full_data_independent",
            ModelFamily::Interactions => "interactions",
            ModelFamily::SiteRidge => "site_ridge",
        }
    }

    /// Whether the family is fitted to household microdata.
    pub fn uses_microdata(self) -> bool {
        !matches!(self, ModelFamily::RubinSummary | ModelFamily::JointSummary)
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelFamily::ALL
            .iter()
            .copied()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Spec(format!("unknown model family `{s}`")))
    }
}

/// Prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Standard deviation of the normal prior on every hypermean.
    pub hypermean_sd: f64,
    /// Scale of the half-Cauchy prior on every parent scale.
    pub theta_scale: f64,
    /// LKJ shape for the parent correlation.
    pub lkj_eta: f64,
    /// Upper bound of the uniform prior on outcome sds.
    pub sigma_y_upper: f64,
    /// Standard deviation of the spherical normal prior on Ridge slopes.
    pub ridge_sd: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            hypermean_sd: 1000.0,
            theta_scale: 10.0,
            lkj_eta: 3.0,
            sigma_y_upper: 100_000.0,
            ridge_sd: 0.5,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0) || !v.is_finite() {
                errs.push(format!("{name} must be positive and finite, got {v}"));
            }
        };
        positive("hypermean_sd", self.hypermean_sd);
        positive("theta_scale", self.theta_scale);
        positive("lkj_eta", self.lkj_eta);
        positive("sigma_y_upper", self.sigma_y_upper);
        positive("ridge_sd", self.ridge_sd);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// How site effects enter the unconstrained vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Site effects are `parent + scale * z_k` with free `z_k`.
    #[default]
    NonCentered,
    /// Site effects are free coordinates. Not available for the interactions
    /// family.
    Centered,
}

impl Parameterization {
    pub fn as_str(self) -> &'static str {
        match self {
            Parameterization::NonCentered => "non_centered",
            Parameterization::Centered => "centered",
        }
    }
}

impl std::str::FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non_centered" => Ok(Parameterization::NonCentered),
            "centered" => Ok(Parameterization::Centered),
            _ => Err(Error::Spec(format!("unknown parameterization `{s}`"))),
        }
    }
}

/// A model family with its priors, parameterization and covariate selections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub priors: PriorConfig,
    pub parameterization: Parameterization,
    /// Binary household covariates fully interacted by the interactions family.
    pub interaction_covariates: Vec<String>,
    /// Site covariates used by the Ridge family. Empty means every column.
    pub ridge_covariates: Vec<String>,
    /// Include the site control-group mean as a regressor in the effect
    /// equation of the Ridge family.
    pub ridge_control_mean: bool,
}

impl ModelSpec {
    pub fn new(family: ModelFamily) -> Self {
        ModelSpec {
            family,
            priors: PriorConfig::default(),
            parameterization: Parameterization::NonCentered,
            interaction_covariates: Vec::new(),
            ridge_covariates: Vec::new(),
            ridge_control_mean: true,
        }
    }

    pub fn with_priors(mut self, priors: PriorConfig) -> Self {
        self.priors = priors;
        self
    }

    pub fn with_parameterization(mut self, parameterization: Parameterization) -> Self {
        self.parameterization = parameterization;
        self
    }
}

/// Data handed to [`build_target`].
#[derive(Debug, Clone)]
pub enum ModelData {
    Summary(SummaryDataset),
    Micro(MicroDataset),
    Cells(CellDataset),
    /// Microdata with site covariates. The effect-equation regressors
    /// `x_tau` and the mean-equation regressors `x_mu` must be aligned to the
    /// dataset's sites and standardised.
    Ridge {
        data: MicroDataset,
        x_mu: SiteCovariateTable,
        x_tau: SiteCovariateTable,
    },
}

impl ModelData {
    pub fn sites(&self) -> &[String] {
        match self {
            ModelData::Summary(s) => s.sites(),
            ModelData::Micro(m) => m.sites(),
            ModelData::Cells(c) => c.data().sites(),
            ModelData::Ridge { data, .. } => data.sites(),
        }
    }
}

/// A named slice of the unconstrained parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Named slices that partition the unconstrained vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParamLayout {
    blocks: Vec<Block>,
    dim: usize,
}

impl ParamLayout {
    pub(crate) fn push(&mut self, name: &str, len: usize) -> usize {
        let offset = self.dim;
        self.blocks.push(Block {
            name: name.to_string(),
            offset,
            len,
        });
        self.dim += len;
        offset
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// True when the blocks tile `0..dim` without gaps or overlaps.
    pub fn is_partition(&self) -> bool {
        let mut next = 0;
        for b in &self.blocks {
            if b.offset != next {
                return false;
            }
            next += b.len;
        }
        next == self.dim
    }
}

/// A target density that also describes its parameterisation.
pub trait Model: TargetDensity {
    fn family(&self) -> ModelFamily;
    fn layout(&self) -> &ParamLayout;
    fn sites(&self) -> &[String];
}

/// Builds the log-posterior kernel for `spec` on `data`.
pub fn build_target(spec: &ModelSpec, data: &ModelData) -> Result<Box<dyn Model>> {
    spec.priors.validate()?;
    if spec.parameterization == Parameterization::Centered && spec.family == ModelFamily::Interactions {
        return Err(Error::Spec(format!(
            "family {} supports only the non_centered parameterization",
            spec.family
        )));
    }
    let p = spec.priors.clone();
    let model: Box<dyn Model> = match (spec.family, data) {
        (ModelFamily::RubinSummary, ModelData::Summary(s)) => {
            Box::new(RubinModel::with_parameterization(s, p, spec.parameterization))
        }
        (ModelFamily::JointSummary, ModelData::Summary(s)) => {
            Box::new(BivariateModel::joint_summary(s, p)?.with_parameterization(spec.parameterization))
        }
        (ModelFamily::FullDataJoint, ModelData::Micro(m)) => {
            Box::new(BivariateModel::full_data(m, p, true).with_parameterization(spec.parameterization))
        }
        (ModelFamily::FullDataIndependent, ModelData::Micro(m)) => {
            Box::new(BivariateModel::full_data(m, p, false).with_parameterization(spec.parameterization))
        }
        (ModelFamily::Interactions, ModelData::Cells(c)) => Box::new(InteractionsModel::new(c, p)?),
        (ModelFamily::SiteRidge, ModelData::Ridge { data, x_mu, x_tau }) => {
            Box::new(BivariateModel::ridge(data, x_mu, x_tau, p)?.with_parameterization(spec.parameterization))
        }
        (family, _) => {
            return Err(Error::Spec(format!(
                "family {family} cannot be fitted to the supplied data"
            )))
        }
    };
    debug_assert!(model.layout().is_partition());
    Ok(model)
}

/// Standard names for a 2x2 matrix parameter, e.g. `V[1,2]`.
pub(crate) fn matrix_names(prefix: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(4);
    for i in 1..=2 {
        for j in 1..=2 {
            out.push(format!("{prefix}[{i},{j}]"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for f in ModelFamily::ALL {
            assert_eq!(f.as_str().parse::<ModelFamily>().unwrap(), f);
        }
        assert!("rubin".parse::<ModelFamily>().is_err());
    }

    #[test]
    fn mismatched_data_is_a_spec_error() {
        let s = SummaryDataset::new(
            vec!["1".into(), "2".into()],
            vec![1.0, 3.0],
            vec![1.0, 1.0],
            None,
        )
        .unwrap();
        let err = build_target(&ModelSpec::new(ModelFamily::FullDataJoint), &ModelData::Summary(s.clone()))
            .err()
            .unwrap();
        assert!(matches!(err, Error::Spec(_)));
        let err = build_target(&ModelSpec::new(ModelFamily::JointSummary), &ModelData::Summary(s))
            .err()
            .unwrap();
        assert!(matches!(err, Error::Spec(_)));
    }
}
