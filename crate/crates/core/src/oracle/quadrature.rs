use std::f64::consts::FRAC_PI_2;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::SummaryDataset;
use crate::models::PriorConfig;
use crate::{Error, Result};

/// Largest grid the oracle will evaluate.
pub const MAX_GRID_POINTS: usize = 100_000_000;

/// Largest number of sites the oracle accepts.
pub const MAX_QUADRATURE_SITES: usize = 3;

/// Deterministic integration grid over `(tau, sigma_tau)`.
///
/// The `sigma_tau` axis is uniform in `u = F(sigma_tau)`, the half-Cauchy
/// prior CDF, over `[0, sigma_prior_mass]`, so the heavy prior tail is covered
/// with bounded spacing in `u`. For each `sigma_tau` node the `tau` axis spans
/// `tau_half_width` conditional standard deviations either side of the
/// conditional posterior mean of `tau`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub sigma_points: usize,
    /// Prior mass of `sigma_tau` covered by the grid; at least 0.999.
    pub sigma_prior_mass: f64,
    pub tau_points: usize,
    pub tau_half_width: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            sigma_points: 4001,
            sigma_prior_mass: 0.9999,
            tau_points: 401,
            tau_half_width: 8.0,
        }
    }
}

impl GridSpec {
    /// The same bounds with every spacing halved.
    pub fn refined(&self) -> Self {
        GridSpec {
            sigma_points: 2 * self.sigma_points - 1,
            tau_points: 2 * self.tau_points - 1,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.sigma_points < 3 || self.tau_points < 3 {
            errs.push("grid needs at least 3 points per axis".to_string());
        }
        if !(self.sigma_prior_mass >= 0.999 && self.sigma_prior_mass < 1.0) {
            errs.push(format!("sigma_prior_mass must lie in [0.999, 1), got {}", self.sigma_prior_mass));
        }
        if !(self.tau_half_width > 0.0) {
            errs.push("tau_half_width must be positive".into());
        }
        if self.sigma_points.saturating_mul(self.tau_points) > MAX_GRID_POINTS {
            errs.push(format!("grid exceeds {MAX_GRID_POINTS} points"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Oracle(errs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureResult {
    pub tau_mean: f64,
    pub tau_sd: f64,
    pub sigma_tau_mean: f64,
    pub sigma_tau_sd: f64,
    pub tau_k_mean: Vec<f64>,
    pub tau_k_sd: Vec<f64>,
    /// 2.5%, 50% and 97.5% quantiles.
    pub tau_quantiles: [f64; 3],
    pub sigma_tau_quantiles: [f64; 3],
    /// Upper bound on the posterior mass outside the grid.
    pub truncated_mass: f64,
    pub grid: GridSpec,
}

struct Marginal {
    /// log of the integral of [`log_integrand`] over `tau`.
    log_mass: f64,
    mean: f64,
    sd: f64,
}

/// `tau` integrated out analytically given `sigma_tau`; used to place the
/// `tau` nodes and to bound the truncated tail.
fn tau_marginal(sigma: f64, tau_hat: &[f64], se: &[f64], prior_sd: f64) -> Marginal {
    let mut prec = 1.0 / (prior_sd * prior_sd);
    let mut lin = 0.0;
    let mut quad = 0.0;
    let mut log_det = 0.0;
    for (t, s) in tau_hat.iter().zip(se) {
        let v = sigma * sigma + s * s;
        prec += 1.0 / v;
        lin += t / v;
        quad += t * t / v;
        log_det += v.ln();
    }
    let mean = lin / prec;
    Marginal {
        log_mass: -0.5 * (log_det + quad - mean * mean * prec + prec.ln()) + 0.5 * (2.0 * std::f64::consts::PI).ln(),
        mean,
        sd: prec.powf(-0.5),
    }
}

/// Log integrand in `(tau, u)`: the `u` parameterisation absorbs the
/// half-Cauchy prior, leaving the normal prior on `tau` and the marginal
/// likelihood `tau_hat_k ~ N(tau, sigma^2 + se_k^2)`.
fn log_integrand(tau: f64, sigma: f64, tau_hat: &[f64], se: &[f64], prior_sd: f64) -> f64 {
    let mut lp = -0.5 * (tau / prior_sd).powi(2);
    for (t, s) in tau_hat.iter().zip(se) {
        let v = sigma * sigma + s * s;
        lp -= 0.5 * (v.ln() + (t - tau).powi(2) / v);
    }
    lp
}

fn trapezoid_weights(n: usize, h: f64) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
}

fn interp_quantile(x: &[f64], cdf: &[f64], p: f64) -> f64 {
    let i = cdf.partition_point(|c| *c < p).clamp(1, cdf.len() - 1);
    let (c0, c1) = (cdf[i - 1], cdf[i]);
    let f = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
    x[i - 1] + f * (x[i] - x[i - 1])
}

/// Posterior of the normal-normal model on a 2-d grid.
///
/// The site effects are integrated out analytically, so the integrand is a
/// function of `(tau, sigma_tau)` only. Site-effect moments come from the
/// conditional normal formulas averaged over the grid.
pub fn quadrature_rubin_posterior(
    data: &SummaryDataset,
    priors: &PriorConfig,
    grid: &GridSpec,
) -> Result<QuadratureResult> {
    grid.validate()?;
    let k = data.n_sites();
    if k > MAX_QUADRATURE_SITES {
        return Err(Error::Oracle(format!(
            "quadrature oracle supports at most {MAX_QUADRATURE_SITES} sites, got {k}"
        )));
    }
    let (tau_hat, se) = (data.tau_hat(), data.se_tau());
    let h0 = priors.hypermean_sd;
    let scale = priors.theta_scale;
    let u_max = grid.sigma_prior_mass;
    let du = u_max / (grid.sigma_points - 1) as f64;
    let sigma_at = |u: f64| scale * (FRAC_PI_2 * u).tan();

    let sigmas: Vec<f64> = (0..grid.sigma_points).map(|j| sigma_at(j as f64 * du)).collect();
    let marginals: Vec<Marginal> = sigmas.iter().map(|s| tau_marginal(*s, tau_hat, se, h0)).collect();
    let shift = marginals.iter().map(|m| m.log_mass).fold(f64::NEG_INFINITY, f64::max);

    let nt = grid.tau_points;
    let mut z = 0.0;
    let (mut s_tau, mut s_tau2, mut s_sig, mut s_sig2) = (0.0, 0.0, 0.0, 0.0);
    let mut s_c = vec![0.0; k];
    let mut s_c2 = vec![0.0; k];
    let mut row_mass = Vec::with_capacity(sigmas.len());
    let mut row_tau = Vec::with_capacity(sigmas.len());
    let mut cond_mean = vec![0.0; k];
    let mut cond_var = vec![0.0; k];
    for ((&sigma, m), wu) in sigmas.iter().zip(&marginals).zip(trapezoid_weights(grid.sigma_points, du)) {
        let lo = m.mean - grid.tau_half_width * m.sd;
        let dt = 2.0 * grid.tau_half_width * m.sd / (nt - 1) as f64;
        let mut r_mass = 0.0;
        let mut r_tau = 0.0;
        let mut r_tau2 = 0.0;
        let mut r_c = vec![0.0; k];
        let mut r_c2 = vec![0.0; k];
        for (i, wt) in trapezoid_weights(nt, dt).enumerate() {
            let tau = lo + i as f64 * dt;
            let w = wt * (log_integrand(tau, sigma, tau_hat, se, h0) - shift).exp();
            r_mass += w;
            r_tau += w * tau;
            r_tau2 += w * tau * tau;
            for j in 0..k {
                if sigma > 0.0 {
                    let p = 1.0 / (sigma * sigma) + 1.0 / (se[j] * se[j]);
                    cond_mean[j] = (tau / (sigma * sigma) + tau_hat[j] / (se[j] * se[j])) / p;
                    cond_var[j] = 1.0 / p;
                } else {
                    cond_mean[j] = tau;
                    cond_var[j] = 0.0;
                }
                r_c[j] += w * cond_mean[j];
                r_c2[j] += w * (cond_mean[j] * cond_mean[j] + cond_var[j]);
            }
        }
        z += wu * r_mass;
        s_tau += wu * r_tau;
        s_tau2 += wu * r_tau2;
        s_sig += wu * r_mass * sigma;
        s_sig2 += wu * r_mass * sigma * sigma;
        for j in 0..k {
            s_c[j] += wu * r_c[j];
            s_c2[j] += wu * r_c2[j];
        }
        row_mass.push(wu * r_mass);
        row_tau.push((m.mean, m.sd));
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Oracle("grid carries no posterior mass".into()));
    }

    // Beyond u_max the row masses decrease in sigma, so the last row bounds
    // the tail; the tau window loses 2 Phi(-width) of each row.
    let last = marginals.last().map_or(0.0, |m| (m.log_mass - shift).exp());
    let tail_sigma = (1.0 - u_max) * last;
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Oracle(e.to_string()))?;
    let tail_tau = 2.0 * normal.cdf(-grid.tau_half_width);
    let truncated_mass = tail_sigma / (z + tail_sigma) + tail_tau;
    if truncated_mass > 1e-3 {
        return Err(Error::Oracle(format!(
            "grid truncates {truncated_mass:.2e} of the posterior mass; widen the bounds"
        )));
    }

    let var = |s1: f64, s2: f64| (s2 / z - (s1 / z).powi(2)).max(0.0).sqrt();

    // sigma quantiles from the cumulative row masses; tau quantiles from the
    // mixture of conditional normals weighted by row mass.
    let mut cdf = Vec::with_capacity(row_mass.len());
    let mut acc = 0.0;
    for (i, m) in row_mass.iter().enumerate() {
        if i > 0 {
            acc += 0.5 * (row_mass[i - 1] + m);
        }
        cdf.push(acc);
    }
    let total = acc;
    let sigma_q = [0.025, 0.5, 0.975].map(|p| interp_quantile(&sigmas, &cdf, p * total));
    let mix_cdf = |t: f64| {
        row_mass
            .iter()
            .zip(&row_tau)
            .map(|(w, (m, s))| w * normal.cdf((t - m) / s))
            .sum::<f64>()
            / z
    };
    let tau_q = [0.025, 0.5, 0.975].map(|p| {
        let (mut a, mut b) = (s_tau / z - 1e3 * var(s_tau, s_tau2) - 1.0, s_tau / z + 1e3 * var(s_tau, s_tau2) + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mix_cdf(mid) < p {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    });

    Ok(QuadratureResult {
        tau_mean: s_tau / z,
        tau_sd: var(s_tau, s_tau2),
        sigma_tau_mean: s_sig / z,
        sigma_tau_sd: var(s_sig, s_sig2),
        tau_k_mean: s_c.iter().map(|s| s / z).collect(),
        tau_k_sd: s_c.iter().zip(&s_c2).map(|(a, b)| var(*a, *b)).collect(),
        tau_quantiles: tau_q,
        sigma_tau_quantiles: sigma_q,
        truncated_mass,
        grid: grid.clone(),
    })
}
