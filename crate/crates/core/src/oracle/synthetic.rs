use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::data::{MicroDataset, SiteCovariateTable, SummaryDataset};
use crate::{Error, Result};

/// How observations are generated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Design {
    /// Site estimates `tau_hat_k ~ N(tau_k, se_k^2)` (and `mu_hat_k` when
    /// `se_mu` is given) with known standard errors.
    Summary { se_tau: Vec<f64>, se_mu: Option<Vec<f64>> },
    /// Household rows, `n_per_site` per site, treatment alternating so the
    /// arms are balanced.
    Micro { n_per_site: usize },
}

/// Per-cell parents for a binary household covariate. Cell 1 holds the rows
/// with covariate 0 and cell 2 the rows with covariate 1; site effects are
/// drawn independently in each cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellTruth {
    pub covariate: String,
    /// Share of rows in cell 2.
    pub prevalence: f64,
    pub mu_cell: [f64; 2],
    pub tau_cell: [f64; 2],
    pub sigma_mu_cell: [f64; 2],
    pub sigma_tau_cell: [f64; 2],
}

/// Site covariates entering the parent means: `mu_k = mu + X_mu[k] beta_mu`
/// and `tau_k = tau + X_tau[k] beta_tau`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteCovariateTruth {
    #[serde(skip)]
    pub x_mu: SiteCovariateTable,
    #[serde(skip)]
    pub x_tau: SiteCovariateTable,
    pub beta_mu: Vec<f64>,
    pub beta_tau: Vec<f64>,
}

/// Generating values for a synthetic multi-site experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticTruth {
    pub k: usize,
    pub mu: f64,
    pub tau: f64,
    pub sigma_mu: f64,
    pub sigma_tau: f64,
    /// Correlation of the site means and effects.
    pub rho: f64,
    /// Outcome sd per site (micro designs).
    pub sigma_y: Vec<f64>,
    pub design: Design,
    pub cells: Option<CellTruth>,
    pub site_covariates: Option<SiteCovariateTruth>,
    /// Centre site deviations across sites and set every arm's sample mean
    /// and sample sd exactly to their generating values.
    pub exact_moments: bool,
    pub seed: u64,
}

impl SyntheticTruth {
    /// Micro design with `k` sites of `n` rows, unit outcome sd and no
    /// correlation.
    pub fn micro(k: usize, n: usize, mu: f64, tau: f64, sigma_mu: f64, sigma_tau: f64, seed: u64) -> Self {
        SyntheticTruth {
            k,
            mu,
            tau,
            sigma_mu,
            sigma_tau,
            rho: 0.0,
            sigma_y: vec![1.0; k],
            design: Design::Micro { n_per_site: n },
            cells: None,
            site_covariates: None,
            exact_moments: false,
            seed,
        }
    }

    /// Summary design with given standard errors.
    pub fn summary(tau: f64, sigma_tau: f64, se_tau: Vec<f64>, seed: u64) -> Self {
        let k = se_tau.len();
        SyntheticTruth {
            k,
            mu: 0.0,
            tau,
            sigma_mu: 0.0,
            sigma_tau,
            rho: 0.0,
            sigma_y: vec![1.0; k],
            design: Design::Summary { se_tau, se_mu: None },
            cells: None,
            site_covariates: None,
            exact_moments: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.k == 0 {
            errs.push("at least one site is required".to_string());
        }
        let nonneg = [self.sigma_mu, self.sigma_tau];
        if nonneg.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            errs.push("parent scales must be finite and non-negative".into());
        }
        if !(self.rho.abs() < 1.0) {
            errs.push(format!("correlation must lie in (-1, 1), got {}", self.rho));
        }
        match &self.design {
            Design::Summary { se_tau, se_mu } => {
                if se_tau.len() != self.k || se_mu.as_ref().is_some_and(|s| s.len() != self.k) {
                    errs.push("one standard error per site is required".into());
                }
                if se_tau.iter().chain(se_mu.iter().flatten()).any(|s| !(*s > 0.0)) {
                    errs.push("standard errors must be positive".into());
                }
                if self.cells.is_some() {
                    errs.push("cell effects need a micro design".into());
                }
            }
            Design::Micro { n_per_site } => {
                if self.sigma_y.len() != self.k || self.sigma_y.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                    errs.push("one positive outcome sd per site is required".into());
                }
                let min_block = if self.cells.is_some() { 8 } else { 4 };
                if *n_per_site < min_block {
                    errs.push(format!("at least {min_block} rows per site are required"));
                }
            }
        }
        if let Some(c) = &self.cells {
            if !(c.prevalence > 0.0 && c.prevalence < 1.0) {
                errs.push("cell prevalence must lie in (0, 1)".into());
            }
            if c.sigma_mu_cell.iter().chain(&c.sigma_tau_cell).any(|s| !(*s >= 0.0)) {
                errs.push("cell scales must be non-negative".into());
            }
            if self.site_covariates.is_some() {
                errs.push("cell effects and site covariates cannot be combined".into());
            }
        }
        if let Some(x) = &self.site_covariates {
            if x.x_mu.n_sites() != self.k || x.x_tau.n_sites() != self.k {
                errs.push("site covariates need one row per site".into());
            }
            if x.beta_mu.len() != x.x_mu.n_covariates() || x.beta_tau.len() != x.x_tau.n_covariates() {
                errs.push("one coefficient per site covariate is required".into());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs.join("; ")))
        }
    }

    pub fn site_labels(&self) -> Vec<String> {
        (1..=self.k).map(|i| i.to_string()).collect()
    }
}

/// A simulated dataset with the realised site effects.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub truth: SyntheticTruth,
    pub micro: Option<MicroDataset>,
    pub summary: SummaryDataset,
    /// Realised site means and effects, `[cell][site]` (one cell when there
    /// are no cell effects).
    pub site_mu: Vec<Vec<f64>>,
    pub site_tau: Vec<Vec<f64>>,
}

impl SyntheticData {
    /// Generating values under the parameter names used by the models.
    /// Only names meaningful for the design are included.
    pub fn truth_values(&self) -> Vec<(String, f64)> {
        let t = &self.truth;
        let mut out = Vec::new();
        if let Some(c) = &t.cells {
            for l in 0..2 {
                out.push((format!("mu_cell[{}]", l + 1), c.mu_cell[l]));
                out.push((format!("tau_cell[{}]", l + 1), c.tau_cell[l]));
                out.push((format!("sigma_mu_cell[{}]", l + 1), c.sigma_mu_cell[l]));
                out.push((format!("sigma_tau_cell[{}]", l + 1), c.sigma_tau_cell[l]));
                for k in 0..t.k {
                    out.push((format!("mu[{},{}]", k + 1, l + 1), self.site_mu[l][k]));
                    out.push((format!("tau[{},{}]", k + 1, l + 1), self.site_tau[l][k]));
                }
            }
        } else {
            out.push(("mu".into(), t.mu));
            out.push(("tau".into(), t.tau));
            out.push(("sigma_tau".into(), t.sigma_tau));
            out.push(("theta[1]".into(), t.sigma_mu));
            out.push(("theta[2]".into(), t.sigma_tau));
            out.push(("Omega[1,2]".into(), t.rho));
            out.push(("Omega[2,1]".into(), t.rho));
            let cov = t.rho * t.sigma_mu * t.sigma_tau;
            out.push(("V[1,1]".into(), t.sigma_mu * t.sigma_mu));
            out.push(("V[1,2]".into(), cov));
            out.push(("V[2,1]".into(), cov));
            out.push(("V[2,2]".into(), t.sigma_tau * t.sigma_tau));
            for k in 0..t.k {
                out.push((format!("mu[{}]", k + 1), self.site_mu[0][k]));
                out.push((format!("tau[{}]", k + 1), self.site_tau[0][k]));
            }
            if let Some(x) = &t.site_covariates {
                for (n, b) in x.x_mu.names().iter().zip(&x.beta_mu) {
                    out.push((format!("beta_mu[{n}]"), *b));
                }
                for (n, b) in x.x_tau.names().iter().zip(&x.beta_tau) {
                    out.push((format!("beta_tau[{n}]"), *b));
                }
            }
        }
        if matches!(t.design, Design::Micro { .. }) {
            for (k, s) in t.sigma_y.iter().enumerate() {
                out.push((format!("sigma_y[{}]", k + 1), *s));
            }
        }
        out
    }
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Rescales `z` to sample mean 0 and sample sd 1.
fn standardise(z: &mut [f64]) {
    let n = z.len() as f64;
    let m = z.iter().sum::<f64>() / n;
    let sd = (z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
    for v in z.iter_mut() {
        *v = (*v - m) / sd;
    }
}

fn centre(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

/// Site deviations `(u_mu, u_tau)` with sds `(s_mu, s_tau)` and
/// correlation `rho`.
fn site_deviations(rng: &mut ChaCha8Rng, k: usize, s_mu: f64, s_tau: f64, rho: f64, exact: bool) -> (Vec<f64>, Vec<f64>) {
    let z1 = normals(rng, k);
    let z2 = normals(rng, k);
    let c = (1.0 - rho * rho).sqrt();
    let mut u_mu: Vec<f64> = z1.iter().map(|a| s_mu * a).collect();
    let mut u_tau: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| s_tau * (rho * a + c * b)).collect();
    if exact && k > 1 {
        centre(&mut u_mu);
        centre(&mut u_tau);
    }
    (u_mu, u_tau)
}

/// Draws a dataset from `truth`. The same truth (including its seed) always
/// gives the same dataset.
pub fn simulate_hierarchical_data(truth: &SyntheticTruth) -> Result<SyntheticData> {
    truth.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(truth.seed);
    let k = truth.k;
    let exact = truth.exact_moments;
    let sites = truth.site_labels();

    let (site_mu, site_tau) = match &truth.cells {
        Some(c) => {
            let mut mus = Vec::new();
            let mut taus = Vec::new();
            for l in 0..2 {
                let (um, ut) = site_deviations(&mut rng, k, c.sigma_mu_cell[l], c.sigma_tau_cell[l], 0.0, exact);
                mus.push(um.iter().map(|u| c.mu_cell[l] + u).collect());
                taus.push(ut.iter().map(|u| c.tau_cell[l] + u).collect());
            }
            (mus, taus)
        }
        None => {
            let (um, ut) = site_deviations(&mut rng, k, truth.sigma_mu, truth.sigma_tau, truth.rho, exact);
            let mut mu: Vec<f64> = um.iter().map(|u| truth.mu + u).collect();
            let mut tau: Vec<f64> = ut.iter().map(|u| truth.tau + u).collect();
            if let Some(x) = &truth.site_covariates {
                for i in 0..k {
                    mu[i] += x.x_mu.row(i).iter().zip(&x.beta_mu).map(|(a, b)| a * b).sum::<f64>();
                    tau[i] += x.x_tau.row(i).iter().zip(&x.beta_tau).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            (vec![mu], vec![tau])
        }
    };

    match &truth.design {
        Design::Summary { se_tau, se_mu } => {
            let tau_hat = (0..k).map(|i| site_tau[0][i] + se_tau[i] * rng.sample::<f64, _>(StandardNormal)).collect();
            let mu_hat = se_mu.as_ref().map(|se| {
                let m = (0..k).map(|i| site_mu[0][i] + se[i] * rng.sample::<f64, _>(StandardNormal)).collect();
                (m, se.clone())
            });
            let summary = SummaryDataset::new(sites, tau_hat, se_tau.clone(), mu_hat)?;
            Ok(SyntheticData {
                truth: truth.clone(),
                micro: None,
                summary,
                site_mu,
                site_tau,
            })
        }
        Design::Micro { n_per_site } => {
            let n = *n_per_site;
            let mut site_col = Vec::with_capacity(k * n);
            let mut t_col = Vec::with_capacity(k * n);
            let mut y_col = Vec::with_capacity(k * n);
            let mut b_col = Vec::with_capacity(k * n);
            for i in 0..k {
                // rows grouped by covariate value, treatment alternating within group
                let n_b1 = truth.cells.as_ref().map_or(0, |c| {
                    if exact {
                        ((c.prevalence * n as f64).round() as usize).clamp(4, n - 4)
                    } else {
                        (0..n).filter(|_| rng.random::<f64>() < c.prevalence).count().clamp(4, n - 4)
                    }
                });
                for (b, size) in [(0u8, n - n_b1), (1u8, n_b1)] {
                    if size == 0 {
                        continue;
                    }
                    let l = usize::from(b == 1 && truth.cells.is_some());
                    for arm in 0..2u8 {
                        let m = (size + 1 - arm as usize) / 2;
                        let mut z = normals(&mut rng, m);
                        if exact {
                            standardise(&mut z);
                        }
                        let mean = site_mu[l][i] + f64::from(arm) * site_tau[l][i];
                        for zj in z {
                            site_col.push(sites[i].clone());
                            t_col.push(arm);
                            b_col.push(b);
                            y_col.push(mean + truth.sigma_y[i] * zj);
                        }
                    }
                }
            }
            let (cov_names, cov_vals) = match &truth.cells {
                Some(c) => (vec![c.covariate.clone()], vec![b_col]),
                None => (Vec::new(), Vec::new()),
            };
            let micro = if k == 1 && cov_names.is_empty() {
                MicroDataset::new_single_site_allowed("y", &site_col, t_col, y_col)?
            } else {
                MicroDataset::new("y", &site_col, t_col, y_col, cov_names, cov_vals)?
            };
            let summary = summarise_micro(&micro)?;
            Ok(SyntheticData {
                truth: truth.clone(),
                micro: Some(micro),
                summary,
                site_mu,
                site_tau,
            })
        }
    }
}

/// Per-site difference in means with HC1 standard errors, and control-arm
/// means with their standard errors.
pub fn summarise_micro(micro: &MicroDataset) -> Result<SummaryDataset> {
    let stats = micro.site_arm_stats();
    let mut tau_hat = Vec::new();
    let mut se_tau = Vec::new();
    let mut mu_hat = Vec::new();
    let mut se_mu = Vec::new();
    for (site, [c, t]) in micro.sites().iter().zip(&stats) {
        let est = crate::analysis::diff_in_means_hc1(c, t)
            .ok_or_else(|| Error::Validation(format!("site {site}: cannot form a difference in means")))?;
        tau_hat.push(est.estimate);
        se_tau.push(est.se);
        mu_hat.push(c.mean);
        se_mu.push((c.variance() / c.n).sqrt());
    }
    SummaryDataset::new(micro.sites().to_vec(), tau_hat, se_tau, Some((mu_hat, se_mu)))
}
