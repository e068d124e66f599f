use serde::Serialize;

use super::quantiles::{quantile_sorted, sorted_copy};
use crate::sampler::{PosteriorDraws, RHAT_THRESHOLD};

/// The penalty sweep used when none is configured. A penalty is the prior
/// standard deviation of each Ridge coefficient.
pub const DEFAULT_RIDGE_SWEEP: [f64; 4] = [0.25, 0.5, 1.0, 3.0];

const PREFIX: &str = "beta_tau[";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RidgePenaltySummary {
    pub penalty: f64,
    /// Absolute posterior mean of each effect-equation coefficient, in
    /// covariate column order.
    pub magnitudes: Vec<f64>,
    /// Central 95% intervals of each coefficient.
    pub intervals: Vec<[f64; 2]>,
    /// Covariate names from largest to smallest magnitude.
    pub ranking: Vec<String>,
    /// Some magnitudes tie exactly; ties keep covariate column order.
    pub ties: bool,
    pub max_rhat: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeVerdict {
    /// The ranking is identical at every usable penalty.
    Stable,
    Unstable,
    /// Every coefficient's 95% interval contains zero at every usable
    /// penalty, so the ranking carries no information.
    OrderNotMeaningful,
    NoUsableFits,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RidgeReport {
    pub covariates: Vec<String>,
    pub fits: Vec<RidgePenaltySummary>,
    /// Penalties whose fit did not converge.
    pub excluded_penalties: Vec<f64>,
    pub verdict: RidgeVerdict,
}

impl RidgeReport {
    /// Top-ranked covariate at each usable penalty.
    pub fn leaders(&self) -> Vec<&str> {
        self.fits.iter().filter_map(|f| f.ranking.first().map(String::as_str)).collect()
    }
}

fn summarise(penalty: f64, draws: &PosteriorDraws, covariates: &[String]) -> RidgePenaltySummary {
    let mut magnitudes = Vec::with_capacity(covariates.len());
    let mut intervals = Vec::with_capacity(covariates.len());
    for c in covariates {
        let col = draws.column(&format!("{PREFIX}{c}]")).unwrap_or_default();
        let s = sorted_copy(&col);
        magnitudes.push((s.iter().sum::<f64>() / s.len() as f64).abs());
        intervals.push([quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975)]);
    }
    let mut order: Vec<usize> = (0..covariates.len()).collect();
    order.sort_by(|&a, &b| magnitudes[b].total_cmp(&magnitudes[a]));
    let ties = order.windows(2).any(|w| magnitudes[w[0]] == magnitudes[w[1]]);
    let max_rhat = draws
        .diagnostics()
        .iter()
        .filter(|d| d.name.starts_with(PREFIX))
        .filter_map(|d| d.rhat)
        .reduce(f64::max);
    RidgePenaltySummary {
        penalty,
        magnitudes,
        intervals,
        ranking: order.iter().map(|&i| covariates[i].clone()).collect(),
        ties,
        max_rhat,
    }
}

/// Ranks effect-equation coefficients by absolute posterior mean at each
/// penalty of a sweep and checks that the ranking does not move.
///
/// `fits` pairs each penalty with its Ridge posterior. Fits whose verdict
/// failed are excluded and listed.
pub fn ridge_coefficient_report(fits: &[(f64, &PosteriorDraws)]) -> RidgeReport {
    let covariates: Vec<String> = fits
        .first()
        .map(|(_, d)| {
            d.names()
                .iter()
                .filter_map(|n| n.strip_prefix(PREFIX).and_then(|r| r.strip_suffix(']')))
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default();
    let mut excluded = Vec::new();
    let mut summaries = Vec::new();
    for (penalty, draws) in fits {
        if !draws.verdict().passed {
            log::warn!("ridge fit at penalty {penalty} did not converge (R-hat >= {RHAT_THRESHOLD}); excluded");
            excluded.push(*penalty);
            continue;
        }
        summaries.push(summarise(*penalty, draws, &covariates));
    }
    let verdict = if summaries.is_empty() {
        RidgeVerdict::NoUsableFits
    } else if summaries
        .iter()
        .all(|s| s.intervals.iter().all(|[lo, hi]| *lo <= 0.0 && *hi >= 0.0))
    {
        RidgeVerdict::OrderNotMeaningful
    } else if summaries.windows(2).all(|w| w[0].ranking == w[1].ranking) {
        RidgeVerdict::Stable
    } else {
        RidgeVerdict::Unstable
    };
    RidgeReport {
        covariates,
        fits: summaries,
        excluded_penalties: excluded,
        verdict,
    }
}
