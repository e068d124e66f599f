use serde::Serialize;

use super::density::{kde, DensityCurve};
use super::ols::{diff_in_means_hc1, ols_comparators, OlsComparators};
use super::pooling::{pooling_report, PoolingInputs, PoolingReport};
use super::predictive::{predictive_for_fit, PredictiveSummary};
use super::quantiles::{quantile_table, QuantileTable};
use crate::models::{ModelData, ModelFamily};
use crate::sampler::{PosteriorDraws, Verdict};
use crate::{Error, Result};

/// Grid size of the density curves in a report.
pub const DENSITY_POINTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelledPooling {
    /// Empty for a single parent distribution, else the cell label.
    pub label: String,
    pub report: PoolingReport,
}

/// Everything computed from one fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub family: ModelFamily,
    pub outcome: String,
    pub sites: Vec<String>,
    pub seed: u64,
    pub verdict: Verdict,
    pub divergences: usize,
    pub pooling: Vec<LabelledPooling>,
    pub predictive: Vec<PredictiveSummary>,
    #[serde(skip)]
    pub quantiles: QuantileTable,
    pub ols: Option<OlsComparators>,
    #[serde(skip)]
    pub densities: Vec<DensityCurve>,
}

fn col(draws: &PosteriorDraws, name: &str) -> Result<Vec<f64>> {
    draws
        .column(name)
        .ok_or_else(|| Error::Validation(format!("draws have no column `{name}`")))
}

fn cols(draws: &PosteriorDraws, names: impl Iterator<Item = String>) -> Result<Vec<Vec<f64>>> {
    names.map(|n| col(draws, &n)).collect()
}

fn squared(x: Vec<f64>) -> Vec<f64> {
    x.into_iter().map(|v| v * v).collect()
}

fn pooling_for_fit(
    family: ModelFamily,
    data: &ModelData,
    draws: &PosteriorDraws,
    ols: Option<&OlsComparators>,
) -> Result<Vec<LabelledPooling>> {
    let sites = data.sites();
    let k = sites.len();
    let idx = 1..=k;
    match (family, data) {
        (ModelFamily::Interactions, ModelData::Cells(cells)) => {
            let stats = cells.block_stats();
            let mut out = Vec::new();
            for l in 1..=cells.n_cells() {
                let est: Vec<_> = stats.iter().map(|s| diff_in_means_hc1(&s[l - 1][0], &s[l - 1][1])).collect();
                let tau_hat: Vec<f64> = est.iter().map(|e| e.map_or(f64::NAN, |e| e.estimate)).collect();
                let se: Vec<f64> = est.iter().map(|e| e.map_or(f64::NAN, |e| e.se)).collect();
                let tau = col(draws, &format!("tau_cell[{l}]"))?;
                let mu = col(draws, &format!("mu_cell[{l}]"))?;
                let tau_k = cols(draws, idx.clone().map(|i| format!("tau[{i},{l}]")))?;
                let mu_k = cols(draws, idx.clone().map(|i| format!("mu[{i},{l}]")))?;
                let s2 = squared(col(draws, &format!("sigma_tau_cell[{l}]"))?);
                out.push(LabelledPooling {
                    label: cells.describe(l - 1),
                    report: pooling_report(&PoolingInputs {
                        sites,
                        se: &se,
                        tau_hat: &tau_hat,
                        sigma_tau_sq_draws: &s2,
                        tau_draws: &tau,
                        tau_k_draws: &tau_k,
                        mu_draws: Some(&mu),
                        mu_k_draws: Some(&mu_k),
                    }),
                });
            }
            Ok(out)
        }
        _ => {
            let (tau_hat, se) = match (data, ols) {
                (ModelData::Summary(s), _) => (s.tau_hat().to_vec(), s.se_tau().to_vec()),
                (_, Some(o)) => (o.estimates(), o.standard_errors()),
                _ => return Err(Error::Validation("no-pooling estimates unavailable".into())),
            };
            let tau = col(draws, "tau")?;
            let tau_k = cols(draws, idx.clone().map(|i| format!("tau[{i}]")))?;
            let (s2, mu, mu_k) = if family == ModelFamily::RubinSummary {
                (squared(col(draws, "sigma_tau")?), None, None)
            } else {
                (
                    col(draws, "V[2,2]")?,
                    Some(col(draws, "mu")?),
                    Some(cols(draws, idx.map(|i| format!("mu[{i}]")))?),
                )
            };
            Ok(vec![LabelledPooling {
                label: String::new(),
                report: pooling_report(&PoolingInputs {
                    sites,
                    se: &se,
                    tau_hat: &tau_hat,
                    sigma_tau_sq_draws: &s2,
                    tau_draws: &tau,
                    tau_k_draws: &tau_k,
                    mu_draws: mu.as_deref(),
                    mu_k_draws: mu_k.as_deref(),
                }),
            }])
        }
    }
}

/// Pooling metrics, predictive summaries, quantile table, OLS comparators
/// and density curves for one fit. `seed` drives the predictive draws.
pub fn analyze_fit(
    family: ModelFamily,
    outcome: &str,
    data: &ModelData,
    draws: &PosteriorDraws,
    seed: u64,
    thresholds: &[f64],
) -> Result<AnalysisReport> {
    let ols = match data {
        ModelData::Micro(m) | ModelData::Ridge { data: m, .. } => Some(ols_comparators(m)),
        ModelData::Cells(c) => Some(ols_comparators(c.data())),
        ModelData::Summary(_) => None,
    };
    let pooling = pooling_for_fit(family, data, draws, ols.as_ref())?;
    let predictive = predictive_for_fit(draws, family, seed, thresholds)?;

    let mut columns: Vec<(String, Vec<f64>)> = draws
        .names()
        .iter()
        .map(|n| (n.clone(), draws.column(n).unwrap_or_default()))
        .collect();
    for p in &predictive {
        if let (Some(name), Some(d)) = (&p.mu_name, &p.mu_draws) {
            columns.push((name.clone(), d.clone()));
        }
        columns.push((p.tau_name.clone(), p.tau_draws.clone()));
    }
    let quantiles = quantile_table(&columns)?;

    let densities = columns
        .iter()
        .filter(|(n, _)| n == "tau" || n.starts_with("tau[") || n.starts_with("tau_cell[") || n.starts_with("tau_next"))
        .map(|(n, d)| kde(n, d, DENSITY_POINTS))
        .collect();

    Ok(AnalysisReport {
        family,
        outcome: outcome.to_string(),
        sites: data.sites().to_vec(),
        seed,
        verdict: draws.verdict().clone(),
        divergences: draws.divergences(),
        pooling,
        predictive,
        quantiles,
        ols,
        densities,
    })
}
