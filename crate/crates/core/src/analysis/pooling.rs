use serde::Serialize;

/// Conventional pooling factor `se^2 / (sigma_tau^2 + se^2)`, where
/// `sigma_tau_sq` is the posterior mean of the parent variance.
pub fn pooling_factor(se: f64, sigma_tau_sq: f64) -> f64 {
    let v = se * se;
    v / (sigma_tau_sq.max(0.0) + v)
}

/// A pooling quantity that may be clamped to `[0, 1]` or undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClampedMetric {
    /// Clamped value; `None` when undefined.
    pub value: Option<f64>,
    /// Value before clamping.
    pub raw: Option<f64>,
    pub clamped: bool,
}

impl ClampedMetric {
    fn from_raw(raw: f64) -> Self {
        let value = raw.clamp(0.0, 1.0);
        ClampedMetric {
            value: Some(value),
            raw: Some(raw),
            clamped: value != raw,
        }
    }

    const UNDEFINED: ClampedMetric = ClampedMetric {
        value: None,
        raw: None,
        clamped: false,
    };
}

/// Brute-force pooling `(tau_k_post - tau_hat_k) / (tau_post - tau_hat_k)`:
/// the weight on the parent mean when a site's posterior mean is written as
/// a mix of the parent mean and the site's own estimate.
pub fn brute_force_pooling(post_mean_tau_k: f64, post_mean_tau: f64, ols_tau_k: f64) -> ClampedMetric {
    let denom = post_mean_tau - ols_tau_k;
    if denom.abs() < 1e-12 {
        return ClampedMetric::UNDEFINED;
    }
    ClampedMetric::from_raw((post_mean_tau_k - ols_tau_k) / denom)
}

/// Generalised pooling factor
/// `1 - Var_k(E[eps_k]) / E[Var_k(eps_k)]` from a `draws x K` matrix of
/// site deviations `eps_k = tau_k - tau`. Site variances use denominator
/// `K - 1`.
pub fn generalized_pooling(eps_draws: &[Vec<f64>]) -> ClampedMetric {
    let s = eps_draws.len();
    let k = eps_draws.first().map_or(0, Vec::len);
    if s < 2 || k < 2 || eps_draws.iter().any(|r| r.len() != k) {
        return ClampedMetric::UNDEFINED;
    }
    let var_k = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / k as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k as f64 - 1.0)
    };
    let post_means: Vec<f64> = (0..k).map(|j| eps_draws.iter().map(|r| r[j]).sum::<f64>() / s as f64).collect();
    let numer = var_k(&post_means);
    let denom = eps_draws.iter().map(|r| var_k(r)).sum::<f64>() / s as f64;
    if !(denom > 0.0) {
        return ClampedMetric::UNDEFINED;
    }
    ClampedMetric::from_raw(1.0 - numer / denom)
}

/// Pooling metrics for one fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolingReport {
    pub sites: Vec<String>,
    /// Posterior mean of the parent variance of the effects.
    pub sigma_tau_sq_post_mean: f64,
    /// `NaN` (serialised as `null`) where the site has no standard error.
    pub omega: Vec<f64>,
    pub omega_brute_force: Vec<ClampedMetric>,
    pub lambda_tau: ClampedMetric,
    pub lambda_mu: Option<ClampedMetric>,
    pub mean_omega: f64,
    /// Mean over sites where the brute-force metric is defined.
    pub mean_omega_brute_force: Option<f64>,
    pub clamp_events: usize,
}

/// Inputs for [`pooling_report`].
pub struct PoolingInputs<'a> {
    pub sites: &'a [String],
    /// No-pooling standard errors; `NaN` for sites without an estimate.
    pub se: &'a [f64],
    /// No-pooling estimates.
    pub tau_hat: &'a [f64],
    /// Draws of the parent variance.
    pub sigma_tau_sq_draws: &'a [f64],
    pub tau_draws: &'a [f64],
    /// `tau_k_draws[k]` holds the draws of site `k`.
    pub tau_k_draws: &'a [Vec<f64>],
    pub mu_draws: Option<&'a [f64]>,
    pub mu_k_draws: Option<&'a [Vec<f64>]>,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn eps_matrix(parent: &[f64], sites: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..parent.len()).map(|s| sites.iter().map(|c| c[s] - parent[s]).collect()).collect()
}

pub fn pooling_report(inp: &PoolingInputs<'_>) -> PoolingReport {
    let sigma2 = mean(inp.sigma_tau_sq_draws);
    let omega: Vec<f64> = inp.se.iter().map(|se| pooling_factor(*se, sigma2)).collect();
    let tau_post = mean(inp.tau_draws);
    let omega_b: Vec<ClampedMetric> = inp
        .tau_k_draws
        .iter()
        .zip(inp.tau_hat)
        .map(|(d, th)| brute_force_pooling(mean(d), tau_post, *th))
        .collect();
    let lambda_tau = generalized_pooling(&eps_matrix(inp.tau_draws, inp.tau_k_draws));
    let lambda_mu = match (inp.mu_draws, inp.mu_k_draws) {
        (Some(m), Some(mk)) => Some(generalized_pooling(&eps_matrix(m, mk))),
        _ => None,
    };
    let defined: Vec<f64> = omega_b.iter().filter_map(|m| m.value).collect();
    let clamp_events = omega_b.iter().filter(|m| m.clamped).count()
        + usize::from(lambda_tau.clamped)
        + usize::from(lambda_mu.is_some_and(|m| m.clamped));
    PoolingReport {
        sites: inp.sites.to_vec(),
        sigma_tau_sq_post_mean: sigma2,
        mean_omega: mean(&omega.iter().copied().filter(|w| w.is_finite()).collect::<Vec<_>>()),
        omega,
        mean_omega_brute_force: (!defined.is_empty()).then(|| mean(&defined)),
        omega_brute_force: omega_b,
        lambda_tau,
        lambda_mu,
        clamp_events,
    }
}
