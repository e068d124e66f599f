use super::{Model, ModelFamily, ParamLayout, Parameterization, PriorConfig};
use crate::data::SummaryDataset;
use crate::distributions::{half_cauchy_lpdf_grad_unchecked, normal_lpdf_grad_unchecked};
use crate::sampler::TargetDensity;
use crate::transform::Positive;

/// Normal-normal model on per-site effect estimates:
/// `tau_hat_k ~ N(tau_k, se_k^2)`, `tau_k ~ N(tau, sigma_tau^2)`.
///
/// Non-centred layout: `tau`, `log sigma_tau`, `z[1..K]` with
/// `tau_k = tau + sigma_tau z_k`. Centred layout: `tau`, `log sigma_tau`,
/// `tau_k[1..K]`.
#[derive(Debug, Clone)]
pub struct RubinModel {
    sites: Vec<String>,
    tau_hat: Vec<f64>,
    se: Vec<f64>,
    priors: PriorConfig,
    parameterization: Parameterization,
    layout: ParamLayout,
}

impl RubinModel {
    pub fn new(data: &SummaryDataset, priors: PriorConfig) -> Self {
        Self::with_parameterization(data, priors, Parameterization::NonCentered)
    }

    pub fn with_parameterization(data: &SummaryDataset, priors: PriorConfig, parameterization: Parameterization) -> Self {
        Self::from_parts(
            data.sites().to_vec(),
            data.tau_hat().to_vec(),
            data.se_tau().to_vec(),
            priors,
            parameterization,
        )
    }

    pub(crate) fn from_parts(
        sites: Vec<String>,
        tau_hat: Vec<f64>,
        se: Vec<f64>,
        priors: PriorConfig,
        parameterization: Parameterization,
    ) -> Self {
        let mut layout = ParamLayout::default();
        layout.push("tau", 1);
        layout.push("log_sigma_tau", 1);
        match parameterization {
            Parameterization::NonCentered => layout.push("z", tau_hat.len()),
            Parameterization::Centered => layout.push("tau_k", tau_hat.len()),
        };
        RubinModel {
            sites,
            tau_hat,
            se,
            priors,
            parameterization,
            layout,
        }
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    fn k(&self) -> usize {
        self.tau_hat.len()
    }
}

impl TargetDensity for RubinModel {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let tau = x[0];
        let u = x[1];
        let sigma = Positive.constrain(u);
        let z = &x[2..];
        let hm = normal_lpdf_grad_unchecked(tau, 0.0, self.priors.hypermean_sd);
        let hc = half_cauchy_lpdf_grad_unchecked(sigma, self.priors.theta_scale);
        let (jac, djac) = Positive.log_jacobian(u);
        let mut lp = hm.logpdf + hc.logpdf + jac;
        let mut d_tau = hm.d_x;
        let mut d_sigma = hc.d_x;
        if self.parameterization == Parameterization::Centered {
            for k in 0..self.k() {
                let tau_k = x[2 + k];
                let pop = normal_lpdf_grad_unchecked(tau_k, tau, sigma);
                let lik = normal_lpdf_grad_unchecked(self.tau_hat[k], tau_k, self.se[k]);
                lp += pop.logpdf + lik.logpdf;
                d_tau += pop.d_mean;
                d_sigma += pop.d_sd;
                grad[2 + k] = pop.d_x + lik.d_mean;
            }
            grad[0] = d_tau;
            grad[1] = d_sigma * Positive.dx_du(u) + djac;
            return lp;
        }
        for k in 0..self.k() {
            let zp = normal_lpdf_grad_unchecked(z[k], 0.0, 1.0);
            let tau_k = tau + sigma * z[k];
            let lik = normal_lpdf_grad_unchecked(self.tau_hat[k], tau_k, self.se[k]);
            lp += zp.logpdf + lik.logpdf;
            d_tau += lik.d_mean;
            d_sigma += lik.d_mean * z[k];
            grad[2 + k] = zp.d_x + lik.d_mean * sigma;
        }
        grad[0] = d_tau;
        grad[1] = d_sigma * Positive.dx_du(u) + djac;
        lp
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = vec!["tau".to_string()];
        names.extend((1..=self.k()).map(|k| format!("tau[{k}]")));
        names.push("sigma_tau".into());
        names
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        let sigma = Positive.constrain(x[1]);
        let mut out = Vec::with_capacity(self.k() + 2);
        out.push(x[0]);
        match self.parameterization {
            Parameterization::NonCentered => out.extend(x[2..].iter().map(|z| x[0] + sigma * z)),
            Parameterization::Centered => out.extend_from_slice(&x[2..]),
        }
        out.push(sigma);
        out
    }
}

impl Model for RubinModel {
    fn family(&self) -> ModelFamily {
        ModelFamily::RubinSummary
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn sites(&self) -> &[String] {
        &self.sites
    }
}

/// Posterior mean of `tau_k` given the hyperparameters `(tau, sigma_tau)`:
/// the precision-weighted average of the parent mean and the site estimate.
/// With `sigma_tau = 0` it is the parent mean.
pub fn rubin_conditional_site_mean(tau: f64, sigma_tau: f64, tau_hat_k: f64, se_k: f64) -> f64 {
    if sigma_tau == 0.0 {
        return tau;
    }
    let prec_parent = 1.0 / (sigma_tau * sigma_tau);
    let prec_site = 1.0 / (se_k * se_k);
    (prec_parent * tau + prec_site * tau_hat_k) / (prec_parent + prec_site)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_site_shrinkage_example() {
        // sigma = se = 1 gives equal weights
        assert!((rubin_conditional_site_mean(1.0, 1.0, 0.0, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(rubin_conditional_site_mean(3.0, 0.0, 100.0, 1.0), 3.0);
    }

    #[test]
    fn names_follow_layout() {
        let m = RubinModel::from_parts(
            vec!["a".into(), "b".into()],
            vec![0.0, 2.0],
            vec![1.0, 1.0],
            PriorConfig::default(),
            Parameterization::NonCentered,
        );
        assert_eq!(m.param_names(), vec!["tau", "tau[1]", "tau[2]", "sigma_tau"]);
        let c = m.constrain(&[1.0, 0.0, 0.5, -1.0]);
        assert_eq!(c, vec![1.0, 1.5, 0.0, 1.0]);
    }
}
