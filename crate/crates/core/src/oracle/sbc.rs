use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::synthetic::{simulate_hierarchical_data, CellTruth, Design, SiteCovariateTruth, SyntheticData, SyntheticTruth};
use crate::data::{build_interaction_cells, standardize_columns, CellOptions, SiteCovariateTable};
use crate::models::{ModelData, ModelFamily, ModelSpec, PriorConfig};
use crate::sampler::{run_chains, PosteriorDraws, SamplerConfig};
use crate::{Error, Result};

/// Prior mass kept when drawing half-Cauchy scales for calibration runs.
pub const SCALE_PRIOR_MASS: f64 = 0.999;

/// Covariate name used for generated interaction data.
pub const SBC_CELL_COVARIATE: &str = "b";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SbcConfig {
    pub replications: usize,
    pub sites: usize,
    pub n_per_site: usize,
    pub sampler: SamplerConfig,
    /// Posterior draws kept (evenly spaced) per replication; ranks take
    /// values `0..=draws_kept`.
    pub draws_kept: usize,
    pub bins: usize,
    /// Parameters to rank; `None` uses [`default_sbc_parameters`].
    pub parameters: Option<Vec<String>>,
    pub max_exclusion_rate: f64,
    /// A parameter fails when its uniformity p-value is at or below this.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for SbcConfig {
    fn default() -> Self {
        SbcConfig {
            replications: 1000,
            sites: 5,
            n_per_site: 50,
            sampler: SamplerConfig {
                chains: 2,
                warmup: 1000,
                iters: 1000,
                target_accept: 0.95,
                parallel: false,
                gradient_check: false,
                ..SamplerConfig::default()
            },
            draws_kept: 39,
            bins: 20,
            parameters: None,
            max_exclusion_rate: 0.05,
            alpha: 0.01,
            seed: 20_161_018,
        }
    }
}

impl SbcConfig {
    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Oracle("calibration run needs at least one replication".into()));
        }
        let mut errs = Vec::new();
        if self.sites < 2 {
            errs.push("at least two sites are required".to_string());
        }
        if self.bins == 0 || (self.draws_kept + 1) % self.bins != 0 {
            errs.push(format!("draws_kept + 1 ({}) must be a multiple of bins ({})", self.draws_kept + 1, self.bins));
        }
        if self.sampler.chains * self.sampler.iters < self.draws_kept {
            errs.push("fewer posterior draws than draws_kept".into());
        }
        if let Err(Error::Config(e)) = self.sampler.validate() {
            errs.extend(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Parameters ranked by default for each family.
pub fn default_sbc_parameters(family: ModelFamily) -> Vec<String> {
    let names: &[&str] = match family {
        ModelFamily::RubinSummary => &["tau", "sigma_tau", "tau[1]"],
        ModelFamily::JointSummary => &["mu", "tau", "theta[1]", "theta[2]", "tau[1]"],
        ModelFamily::FullDataJoint | ModelFamily::FullDataIndependent => {
            &["mu", "tau", "theta[1]", "theta[2]", "tau[1]", "sigma_y[1]"]
        }
        ModelFamily::Interactions => &["tau_cell[1]", "tau_cell[2]", "sigma_tau_cell[2]", "tau[1,2]"],
        ModelFamily::SiteRidge => &["tau", "theta[2]", "beta_tau[x1]"],
    };
    names.iter().map(|s| s.to_string()).collect()
}

fn half_cauchy_bounded(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let u: f64 = rng.random_range(0.0..SCALE_PRIOR_MASS);
    scale * (FRAC_PI_2 * u).tan()
}

fn random_standardised_table(rng: &mut ChaCha8Rng, sites: &[String], names: &[&str]) -> Result<SiteCovariateTable> {
    let values = sites
        .iter()
        .map(|_| names.iter().map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
        .collect();
    let raw = SiteCovariateTable::new(sites.to_vec(), names.iter().map(|s| s.to_string()).collect(), values)?;
    Ok(standardize_columns(&raw)?.0)
}

/// Draws generating values from the priors of `spec`. Half-Cauchy scales are
/// truncated at their [`SCALE_PRIOR_MASS`] quantile.
pub fn draw_truth_from_prior(spec: &ModelSpec, k: usize, n_per_site: usize, seed: u64) -> Result<SyntheticTruth> {
    let p: &PriorConfig = &spec.priors;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hyper = Normal::new(0.0, p.hypermean_sd).map_err(|e| Error::Domain(e.to_string()))?;
    let mu = hyper.sample(&mut rng);
    let tau = hyper.sample(&mut rng);
    let sigma_mu = half_cauchy_bounded(&mut rng, p.theta_scale);
    let sigma_tau = half_cauchy_bounded(&mut rng, p.theta_scale);
    let rho = match spec.family {
        ModelFamily::JointSummary | ModelFamily::FullDataJoint => {
            let b = Beta::new(p.lkj_eta, p.lkj_eta).map_err(|e| Error::Domain(e.to_string()))?;
            2.0 * b.sample(&mut rng) - 1.0
        }
        _ => 0.0,
    };
    let sigma_y: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..p.sigma_y_upper)).collect();
    let n = n_per_site as f64;
    let design = match spec.family {
        ModelFamily::RubinSummary => Design::Summary {
            se_tau: vec![2.0 / n.sqrt(); k],
            se_mu: None,
        },
        ModelFamily::JointSummary => Design::Summary {
            se_tau: vec![2.0 / n.sqrt(); k],
            se_mu: Some(vec![(2.0 / n).sqrt(); k]),
        },
        _ => Design::Micro { n_per_site },
    };
    let mut truth = SyntheticTruth {
        k,
        mu,
        tau,
        sigma_mu,
        sigma_tau,
        rho,
        sigma_y,
        design,
        cells: None,
        site_covariates: None,
        exact_moments: false,
        seed: rng.random(),
    };
    match spec.family {
        ModelFamily::Interactions => {
            let draw2 = |d: &mut dyn FnMut() -> f64| [d(), d()];
            let mu_cell = draw2(&mut || hyper.sample(&mut rng));
            let tau_cell = draw2(&mut || hyper.sample(&mut rng));
            let sigma_mu_cell = draw2(&mut || half_cauchy_bounded(&mut rng, p.theta_scale));
            let sigma_tau_cell = draw2(&mut || half_cauchy_bounded(&mut rng, p.theta_scale));
            truth.cells = Some(CellTruth {
                covariate: SBC_CELL_COVARIATE.into(),
                prevalence: 0.5,
                mu_cell,
                tau_cell,
                sigma_mu_cell,
                sigma_tau_cell,
            });
        }
        ModelFamily::SiteRidge => {
            let sites = truth.site_labels();
            let x_mu = random_standardised_table(&mut rng, &sites, &["z1", "z2"])?;
            let x_tau = random_standardised_table(&mut rng, &sites, &["x1", "x2"])?;
            let beta = Normal::new(0.0, p.ridge_sd).map_err(|e| Error::Domain(e.to_string()))?;
            truth.site_covariates = Some(SiteCovariateTruth {
                beta_mu: (0..2).map(|_| beta.sample(&mut rng)).collect(),
                beta_tau: (0..2).map(|_| beta.sample(&mut rng)).collect(),
                x_mu,
                x_tau,
            });
        }
        _ => {}
    }
    Ok(truth)
}

/// Wraps simulated data in the form `family` is fitted to.
pub fn model_data_for(family: ModelFamily, sim: &SyntheticData) -> Result<ModelData> {
    let micro = || {
        sim.micro
            .clone()
            .ok_or_else(|| Error::Spec(format!("family {family} needs a micro design")))
    };
    Ok(match family {
        ModelFamily::RubinSummary => ModelData::Summary(crate::data::SummaryDataset::new(
            sim.summary.sites().to_vec(),
            sim.summary.tau_hat().to_vec(),
            sim.summary.se_tau().to_vec(),
            None,
        )?),
        ModelFamily::JointSummary => ModelData::Summary(sim.summary.clone()),
        ModelFamily::FullDataJoint | ModelFamily::FullDataIndependent => ModelData::Micro(micro()?),
        ModelFamily::Interactions => {
            let cov = sim
                .truth
                .cells
                .as_ref()
                .map(|c| c.covariate.clone())
                .ok_or_else(|| Error::Spec("interactions data needs cell effects".into()))?;
            ModelData::Cells(build_interaction_cells(&micro()?, &[cov], CellOptions::default())?)
        }
        ModelFamily::SiteRidge => {
            let x = sim
                .truth
                .site_covariates
                .as_ref()
                .ok_or_else(|| Error::Spec("ridge data needs site covariates".into()))?;
            ModelData::Ridge {
                data: micro()?,
                x_mu: x.x_mu.clone(),
                x_tau: x.x_tau.clone(),
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SbcParameter {
    pub name: String,
    pub histogram: Vec<usize>,
    pub chi_square: f64,
    pub p_value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SbcReport {
    pub family: ModelFamily,
    pub replications: usize,
    pub excluded: usize,
    pub exclusion_rate: f64,
    pub draws_kept: usize,
    pub bins: usize,
    pub parameters: Vec<SbcParameter>,
    pub passed: bool,
    pub seed: u64,
    /// Ranks per replication (`None` for excluded ones), in parameter order.
    pub ranks: Vec<Option<Vec<usize>>>,
}

impl SbcReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

/// Pearson chi-square statistic and p-value for uniform bin counts.
pub fn chi_square_uniform(counts: &[usize]) -> (f64, f64) {
    let total: usize = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    let stat = counts.iter().map(|c| (*c as f64 - e).powi(2) / e).sum::<f64>();
    let p = ChiSquared::new((counts.len() - 1) as f64).map_or(f64::NAN, |d| 1.0 - d.cdf(stat));
    (stat, p)
}

fn replication_seed(base: u64, r: usize) -> u64 {
    base ^ (r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Rank of `truth` among `kept` evenly spaced draws of `column`.
fn rank(column: &[f64], kept: usize, truth: f64) -> usize {
    let n = column.len();
    (0..kept).filter(|i| column[i * n / kept] < truth).count()
}

/// Simulation-based calibration with a custom fitting function. `fit`
/// receives the model data and a sampler config carrying the replication's
/// seed; an error or a failed convergence verdict excludes the replication.
pub fn sbc_run_with<F>(spec: &ModelSpec, config: &SbcConfig, fit: F) -> Result<SbcReport>
where
    F: Fn(&ModelData, &SamplerConfig) -> Result<PosteriorDraws> + Sync,
{
    config.validate()?;
    let params = config
        .parameters
        .clone()
        .unwrap_or_else(|| default_sbc_parameters(spec.family));
    let one = |r: usize| -> Result<Option<Vec<usize>>> {
        let seed = replication_seed(config.seed, r);
        let truth = draw_truth_from_prior(spec, config.sites, config.n_per_site, seed)?;
        let sim = simulate_hierarchical_data(&truth)?;
        let data = model_data_for(spec.family, &sim)?;
        let truth_values = sim.truth_values();
        let sampler = SamplerConfig {
            seed: seed.wrapping_add(1),
            ..config.sampler.clone()
        };
        let draws = match fit(&data, &sampler) {
            Ok(d) if d.verdict().passed => d,
            Ok(_) | Err(_) => return Ok(None),
        };
        let mut ranks = Vec::with_capacity(params.len());
        for p in &params {
            let t = truth_values
                .iter()
                .find(|(n, _)| n == p)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Oracle(format!("no generating value for `{p}`")))?;
            let col = draws
                .column(p)
                .ok_or_else(|| Error::Oracle(format!("fit has no parameter `{p}`")))?;
            ranks.push(rank(&col, config.draws_kept, t));
        }
        Ok(Some(ranks))
    };
    let ranks: Vec<Option<Vec<usize>>> = (0..config.replications)
        .into_par_iter()
        .map(one)
        .collect::<Result<_>>()?;

    let excluded = ranks.iter().filter(|r| r.is_none()).count();
    let exclusion_rate = excluded as f64 / config.replications as f64;
    let width = (config.draws_kept + 1) / config.bins;
    let parameters: Vec<SbcParameter> = params
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut histogram = vec![0; config.bins];
            for r in ranks.iter().flatten() {
                histogram[r[j] / width] += 1;
            }
            let (chi_square, p_value) = chi_square_uniform(&histogram);
            SbcParameter {
                name: name.clone(),
                histogram,
                chi_square,
                p_value,
                passed: p_value > config.alpha,
            }
        })
        .collect();
    let used = config.replications - excluded;
    let passed = used > 0 && exclusion_rate < config.max_exclusion_rate && parameters.iter().all(|p| p.passed);
    Ok(SbcReport {
        family: spec.family,
        replications: config.replications,
        excluded,
        exclusion_rate,
        draws_kept: config.draws_kept,
        bins: config.bins,
        parameters,
        passed,
        seed: config.seed,
        ranks,
    })
}

/// Simulation-based calibration of `spec` with the in-crate sampler.
pub fn sbc_run(spec: &ModelSpec, config: &SbcConfig) -> Result<SbcReport> {
    sbc_run_with(spec, config, |data, sampler| run_chains(spec, data, sampler))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_of_flat_counts() {
        let (s, p) = chi_square_uniform(&[5; 20]);
        assert_eq!(s, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let (_, p) = chi_square_uniform(&[100, 0, 0, 0]);
        assert!(p < 1e-10);
    }

    #[test]
    fn zero_replications_is_an_error() {
        let cfg = SbcConfig {
            replications: 0,
            ..SbcConfig::default()
        };
        assert!(sbc_run(&ModelSpec::new(ModelFamily::RubinSummary), &cfg).is_err());
    }

    #[test]
    fn rank_counts_kept_draws_below_truth() {
        let col: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(rank(&col, 10, 35.0), 4);
        assert_eq!(rank(&col, 10, -1.0), 0);
        assert_eq!(rank(&col, 10, 1000.0), 10);
    }
}
