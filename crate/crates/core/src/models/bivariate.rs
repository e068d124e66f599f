use super::{matrix_names, Model, ModelFamily, ParamLayout, Parameterization, PriorConfig};
use crate::data::{ArmStats, MicroDataset, SiteCovariateTable, SummaryDataset};
use crate::distributions::{
    half_cauchy_lpdf_grad_unchecked, lkj_corr_lpdf_grad, mvn2_lpdf_grad, normal_lpdf_grad_unchecked,
    normal_suff_lpdf_grad, CholeskyCorr, CovarianceDecomp,
};
use crate::error::{Error, Result};
use crate::sampler::TargetDensity;
use crate::transform::{Bounded, CorrCholesky, Positive};

#[derive(Debug, Clone)]
enum Likelihood {
    /// `mu_hat_k ~ N(mu_k, se_mu_k^2)`, `tau_hat_k ~ N(tau_k, se_tau_k^2)`.
    Summary {
        tau_hat: Vec<f64>,
        se_tau: Vec<f64>,
        mu_hat: Vec<f64>,
        se_mu: Vec<f64>,
    },
    /// `y ~ N(mu_k + tau_k T, sigma_yk^2)` from per-site, per-arm statistics.
    Micro { stats: Vec<[ArmStats; 2]> },
}

#[derive(Debug, Clone)]
struct Regressors {
    names: Vec<String>,
    /// `rows[k]` is the covariate vector of site `k`.
    rows: Vec<Vec<f64>>,
}

impl Regressors {
    fn from_table(t: &SiteCovariateTable) -> Self {
        Regressors {
            names: t.names().to_vec(),
            rows: (0..t.n_sites()).map(|k| t.row(k).to_vec()).collect(),
        }
    }

    fn len(&self) -> usize {
        self.names.len()
    }

    fn dot(&self, k: usize, beta: &[f64]) -> f64 {
        self.rows[k].iter().zip(beta).map(|(x, b)| x * b).sum()
    }
}

/// Models with a bivariate normal parent on `(mu_k, tau_k)`: the joint
/// summary model, the full-data models with joint or independent parents
/// and the site-covariate Ridge model.
///
/// Unconstrained layout: `mu`, `tau`, `log theta[1..2]`, the stick-breaking
/// coordinate of the parent correlation (joint parents only),
/// `z_mu[1..K]`, `z_tau[1..K]`, logit-scaled `sigma_y[1..K]` (microdata only),
/// `beta_mu`, `beta_tau` (Ridge only). The centred parameterization holds
/// `mu_k[1..K]`, `tau_k[1..K]` in place of the innovations.
#[derive(Debug, Clone)]
pub struct BivariateModel {
    family: ModelFamily,
    sites: Vec<String>,
    likelihood: Likelihood,
    joint: bool,
    x_mu: Option<Regressors>,
    x_tau: Option<Regressors>,
    priors: PriorConfig,
    centered: bool,
    sigma_y: Bounded,
    layout: ParamLayout,
    off_corr: usize,
    off_z: usize,
    off_sigma_y: usize,
    off_beta: usize,
}

impl BivariateModel {
    fn build(
        family: ModelFamily,
        sites: Vec<String>,
        likelihood: Likelihood,
        joint: bool,
        x_mu: Option<Regressors>,
        x_tau: Option<Regressors>,
        priors: PriorConfig,
        centered: bool,
    ) -> Self {
        let k = sites.len();
        let mut layout = ParamLayout::default();
        layout.push("mu", 1);
        layout.push("tau", 1);
        layout.push("log_theta", 2);
        let off_corr = layout.push("corr", if joint { 1 } else { 0 });
        let (first, second) = if centered { ("mu_k", "tau_k") } else { ("z_mu", "z_tau") };
        let off_z = layout.push(first, k);
        layout.push(second, k);
        let micro = matches!(likelihood, Likelihood::Micro { .. });
        let off_sigma_y = layout.push("sigma_y", if micro { k } else { 0 });
        let off_beta = layout.push("beta_mu", x_mu.as_ref().map_or(0, Regressors::len));
        layout.push("beta_tau", x_tau.as_ref().map_or(0, Regressors::len));
        let sigma_y = Bounded {
            lo: 0.0,
            hi: priors.sigma_y_upper,
        };
        BivariateModel {
            family,
            sites,
            likelihood,
            joint,
            x_mu,
            x_tau,
            priors,
            centered,
            sigma_y,
            layout,
            off_corr,
            off_z,
            off_sigma_y,
            off_beta,
        }
    }

    pub fn joint_summary(data: &SummaryDataset, priors: PriorConfig) -> Result<Self> {
        let (Some(mu_hat), Some(se_mu)) = (data.mu_hat(), data.se_mu()) else {
            return Err(Error::Spec(
                "joint_summary needs mu_hat and se_mu columns in the summary data".into(),
            ));
        };
        let lik = Likelihood::Summary {
            tau_hat: data.tau_hat().to_vec(),
            se_tau: data.se_tau().to_vec(),
            mu_hat: mu_hat.to_vec(),
            se_mu: se_mu.to_vec(),
        };
        Ok(Self::build(
            ModelFamily::JointSummary,
            data.sites().to_vec(),
            lik,
            true,
            None,
            None,
            priors,
            false,
        ))
    }

    /// Full-data model; `joint = false` fixes the parent correlation at 0.
    pub fn full_data(data: &MicroDataset, priors: PriorConfig, joint: bool) -> Self {
        let family = if joint {
            ModelFamily::FullDataJoint
        } else {
            ModelFamily::FullDataIndependent
        };
        let lik = Likelihood::Micro {
            stats: data.site_arm_stats(),
        };
        Self::build(family, data.sites().to_vec(), lik, joint, None, None, priors, false)
    }

    /// Site-covariate Ridge model with joint parents. Both tables must be
    /// aligned to the dataset's sites and standardised.
    pub fn ridge(
        data: &MicroDataset,
        x_mu: &SiteCovariateTable,
        x_tau: &SiteCovariateTable,
        priors: PriorConfig,
    ) -> Result<Self> {
        for (what, t) in [("mean", x_mu), ("effect", x_tau)] {
            if t.sites() != data.sites() {
                return Err(Error::Spec(format!(
                    "{what}-equation covariates are not aligned to the dataset's sites"
                )));
            }
            if t.n_covariates() > 0 && !t.is_standardized(1e-8) {
                return Err(Error::Spec(format!(
                    "{what}-equation covariates must be standardised (mean 0, sd 1)"
                )));
            }
        }
        if x_tau.n_covariates() == 0 {
            return Err(Error::Spec("site_ridge needs at least one effect-equation covariate".into()));
        }
        let lik = Likelihood::Micro {
            stats: data.site_arm_stats(),
        };
        Ok(Self::build(
            ModelFamily::SiteRidge,
            data.sites().to_vec(),
            lik,
            true,
            Some(Regressors::from_table(x_mu)),
            Some(Regressors::from_table(x_tau)),
            priors,
            false,
        ))
    }

    /// The same model under `parameterization`.
    pub fn with_parameterization(self, parameterization: Parameterization) -> Self {
        Self::build(
            self.family,
            self.sites,
            self.likelihood,
            self.joint,
            self.x_mu,
            self.x_tau,
            self.priors,
            parameterization == Parameterization::Centered,
        )
    }

    pub fn parameterization(&self) -> Parameterization {
        if self.centered {
            Parameterization::Centered
        } else {
            Parameterization::NonCentered
        }
    }

    fn k(&self) -> usize {
        self.sites.len()
    }

    fn n_beta_mu(&self) -> usize {
        self.x_mu.as_ref().map_or(0, Regressors::len)
    }

    fn n_beta_tau(&self) -> usize {
        self.x_tau.as_ref().map_or(0, Regressors::len)
    }

    /// Covariate names of the mean and effect equations.
    pub fn regressor_names(&self) -> (Vec<String>, Vec<String>) {
        (
            self.x_mu.as_ref().map(|r| r.names.clone()).unwrap_or_default(),
            self.x_tau.as_ref().map(|r| r.names.clone()).unwrap_or_default(),
        )
    }

    fn corr(&self, x: &[f64]) -> (f64, f64) {
        if self.joint {
            let l = CorrCholesky::new(2).constrain(&x[self.off_corr..self.off_corr + 1]);
            (l.get(1, 0), l.get(1, 1))
        } else {
            (0.0, 1.0)
        }
    }

    /// Site means `(mu_k, tau_k)` at unconstrained point `x`.
    fn site_effects(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.k();
        let (theta1, theta2) = (x[2].exp(), x[3].exp());
        let (rho, s) = self.corr(x);
        let z1 = &x[self.off_z..self.off_z + k];
        let z2 = &x[self.off_z + k..self.off_z + 2 * k];
        let beta_mu = &x[self.off_beta..self.off_beta + self.n_beta_mu()];
        let beta_tau = &x[self.off_beta + self.n_beta_mu()..self.off_beta + self.n_beta_mu() + self.n_beta_tau()];
        let mut mu_k = Vec::with_capacity(k);
        let mut tau_k = Vec::with_capacity(k);
        for i in 0..k {
            let xm = self.x_mu.as_ref().map_or(0.0, |r| r.dot(i, beta_mu));
            let xt = self.x_tau.as_ref().map_or(0.0, |r| r.dot(i, beta_tau));
            if self.centered {
                mu_k.push(z1[i]);
                tau_k.push(z2[i]);
            } else {
                mu_k.push(x[0] + xm + theta1 * z1[i]);
                tau_k.push(x[1] + xt + theta2 * (rho * z1[i] + s * z2[i]));
            }
        }
        (mu_k, tau_k)
    }
}

impl TargetDensity for BivariateModel {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.k();
        let pr = &self.priors;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (mu, tau) = (x[0], x[1]);
        let theta = [Positive.constrain(x[2]), Positive.constrain(x[3])];

        let mut lp = 0.0;
        for (i, v) in [mu, tau].into_iter().enumerate() {
            let g = normal_lpdf_grad_unchecked(v, 0.0, pr.hypermean_sd);
            lp += g.logpdf;
            grad[i] += g.d_x;
        }
        // d lp / d theta, converted to the log scale at the end
        let mut d_theta = [0.0; 2];
        for i in 0..2 {
            let hc = half_cauchy_lpdf_grad_unchecked(theta[i], pr.theta_scale);
            lp += hc.logpdf;
            d_theta[i] += hc.d_x;
        }

        // parent correlation
        let transform = CorrCholesky::new(2);
        let y_corr = &x[self.off_corr..self.off_corr + usize::from(self.joint)];
        let (rho, s) = self.corr(x);
        let mut g_factor = vec![0.0; 4];
        let mut d_jac_corr = 0.0;
        if self.joint {
            let l = transform.constrain(y_corr);
            let (lkj, g) = lkj_corr_lpdf_grad(&l, pr.lkj_eta).unwrap_or((f64::NEG_INFINITY, vec![0.0; 4]));
            let (jac, djac) = transform.log_jacobian(y_corr);
            lp += lkj + jac;
            g_factor = g;
            d_jac_corr = djac[0];
        }
        // gradient wrt factor entries L[1,0] (rho) and L[1,1] (s)
        let mut d_l10 = 0.0;
        let mut d_l11 = 0.0;

        let z1 = &x[self.off_z..self.off_z + k];
        let z2 = &x[self.off_z + k..self.off_z + 2 * k];
        let nbm = self.n_beta_mu();
        let nbt = self.n_beta_tau();
        let beta_mu = &x[self.off_beta..self.off_beta + nbm];
        let beta_tau = &x[self.off_beta + nbm..self.off_beta + nbm + nbt];
        for b in beta_mu.iter().chain(beta_tau) {
            let g = normal_lpdf_grad_unchecked(*b, 0.0, pr.ridge_sd);
            lp += g.logpdf;
        }
        for (j, b) in beta_mu.iter().chain(beta_tau).enumerate() {
            grad[self.off_beta + j] += -b / (pr.ridge_sd * pr.ridge_sd);
        }

        let parent = if self.centered {
            let corr = CholeskyCorr::from_rho(rho).unwrap_or_else(|_| CholeskyCorr::identity(2));
            CovarianceDecomp::new(theta.to_vec(), corr).ok()
        } else {
            None
        };
        for i in 0..k {
            let xm = self.x_mu.as_ref().map_or(0.0, |r| r.dot(i, beta_mu));
            let xt = self.x_tau.as_ref().map_or(0.0, |r| r.dot(i, beta_tau));
            let mix = rho * z1[i] + s * z2[i];
            let (mu_k, tau_k) = if self.centered {
                let g = match &parent {
                    Some(d) => mvn2_lpdf_grad([z1[i], z2[i]], [mu + xm, tau + xt], d).ok(),
                    None => None,
                };
                let Some(g) = g else {
                    grad.iter_mut().for_each(|v| *v = 0.0);
                    return f64::NEG_INFINITY;
                };
                lp += g.logpdf;
                grad[self.off_z + i] += g.d_x[0];
                grad[self.off_z + k + i] += g.d_x[1];
                grad[0] += g.d_mean[0];
                grad[1] += g.d_mean[1];
                d_theta[0] += g.d_theta[0];
                d_theta[1] += g.d_theta[1];
                // d_rho already includes the dependence of L[1,1] on rho
                d_l10 += g.d_rho;
                if let Some(r) = &self.x_mu {
                    for (m, xv) in r.rows[i].iter().enumerate() {
                        grad[self.off_beta + m] += g.d_mean[0] * xv;
                    }
                }
                if let Some(r) = &self.x_tau {
                    for (m, xv) in r.rows[i].iter().enumerate() {
                        grad[self.off_beta + nbm + m] += g.d_mean[1] * xv;
                    }
                }
                (z1[i], z2[i])
            } else {
                lp += -0.5 * (z1[i] * z1[i] + z2[i] * z2[i]) - 2.0 * 0.918_938_533_204_672_8;
                grad[self.off_z + i] -= z1[i];
                grad[self.off_z + k + i] -= z2[i];
                (mu + xm + theta[0] * z1[i], tau + xt + theta[1] * mix)
            };

            // likelihood partials wrt mu_k and tau_k
            let (gm, gt) = match &self.likelihood {
                Likelihood::Summary {
                    tau_hat,
                    se_tau,
                    mu_hat,
                    se_mu,
                } => {
                    let a = normal_lpdf_grad_unchecked(mu_hat[i], mu_k, se_mu[i]);
                    let b = normal_lpdf_grad_unchecked(tau_hat[i], tau_k, se_tau[i]);
                    lp += a.logpdf + b.logpdf;
                    (a.d_mean, b.d_mean)
                }
                Likelihood::Micro { stats } => {
                    let u = x[self.off_sigma_y + i];
                    let sy = self.sigma_y.constrain(u);
                    let [c, t] = stats[i];
                    let a = normal_suff_lpdf_grad(c.n, c.mean, c.ss, mu_k, sy);
                    let b = normal_suff_lpdf_grad(t.n, t.mean, t.ss, mu_k + tau_k, sy);
                    let (jac, djac) = self.sigma_y.log_jacobian(u);
                    lp += a.logpdf + b.logpdf + jac - pr.sigma_y_upper.ln();
                    grad[self.off_sigma_y + i] += (a.d_sd + b.d_sd) * self.sigma_y.dx_du(u) + djac;
                    (a.d_mean + b.d_mean, b.d_mean)
                }
            };
            if self.centered {
                grad[self.off_z + i] += gm;
                grad[self.off_z + k + i] += gt;
                continue;
            }
            grad[0] += gm;
            grad[1] += gt;
            d_theta[0] += gm * z1[i];
            d_theta[1] += gt * mix;
            grad[self.off_z + i] += gm * theta[0] + gt * theta[1] * rho;
            grad[self.off_z + k + i] += gt * theta[1] * s;
            d_l10 += gt * theta[1] * z1[i];
            d_l11 += gt * theta[1] * z2[i];
            if let Some(r) = &self.x_mu {
                for (m, xv) in r.rows[i].iter().enumerate() {
                    grad[self.off_beta + m] += gm * xv;
                }
            }
            if let Some(r) = &self.x_tau {
                for (m, xv) in r.rows[i].iter().enumerate() {
                    grad[self.off_beta + nbm + m] += gt * xv;
                }
            }
        }

        for i in 0..2 {
            let (jac, djac) = Positive.log_jacobian(x[2 + i]);
            lp += jac;
            grad[2 + i] += d_theta[i] * Positive.dx_du(x[2 + i]) + djac;
        }
        if self.joint {
            g_factor[2] += d_l10;
            g_factor[3] += d_l11;
            let pulled = transform.pullback(y_corr, &g_factor);
            grad[self.off_corr] += pulled[0] + d_jac_corr;
        }
        lp
    }

    fn param_names(&self) -> Vec<String> {
        let k = self.k();
        let mut names = vec!["mu".to_string(), "tau".to_string()];
        names.extend((1..=k).map(|i| format!("mu[{i}]")));
        names.extend((1..=k).map(|i| format!("tau[{i}]")));
        if matches!(self.likelihood, Likelihood::Micro { .. }) {
            names.extend((1..=k).map(|i| format!("sigma_y[{i}]")));
        }
        if self.joint {
            names.extend(matrix_names("Omega"));
        }
        names.push("theta[1]".into());
        names.push("theta[2]".into());
        names.extend(matrix_names("V"));
        if let Some(r) = &self.x_mu {
            names.extend(r.names.iter().map(|n| format!("beta_mu[{n}]")));
        }
        if let Some(r) = &self.x_tau {
            names.extend(r.names.iter().map(|n| format!("beta_tau[{n}]")));
        }
        names
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        let k = self.k();
        let (mu_k, tau_k) = self.site_effects(x);
        let theta = [x[2].exp(), x[3].exp()];
        let (rho, _) = self.corr(x);
        let mut out = Vec::with_capacity(self.param_names().len());
        out.push(x[0]);
        out.push(x[1]);
        out.extend(mu_k);
        out.extend(tau_k);
        if matches!(self.likelihood, Likelihood::Micro { .. }) {
            out.extend((0..k).map(|i| self.sigma_y.constrain(x[self.off_sigma_y + i])));
        }
        if self.joint {
            out.extend([1.0, rho, rho, 1.0]);
        }
        out.extend(theta);
        let cov = theta[0] * theta[1] * rho;
        out.extend([theta[0] * theta[0], cov, cov, theta[1] * theta[1]]);
        let nb = self.n_beta_mu() + self.n_beta_tau();
        out.extend_from_slice(&x[self.off_beta..self.off_beta + nb]);
        out
    }
}

impl Model for BivariateModel {
    fn family(&self) -> ModelFamily {
        self.family
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn sites(&self) -> &[String] {
        &self.sites
    }
}
