use super::{Model, ModelFamily, ParamLayout, PriorConfig};
use crate::data::{ArmStats, CellDataset};
use crate::distributions::{half_cauchy_lpdf_grad_unchecked, normal_lpdf_grad_unchecked, normal_suff_lpdf_grad};
use crate::error::{Error, Result};
use crate::sampler::TargetDensity;
use crate::transform::{Bounded, Positive};

/// Fully interacted household-covariate model with independent parents per
/// cell: `y ~ N(mu_{k,l} + tau_{k,l} T, sigma_yk^2)` for a row of site `k` in
/// cell `l`, with `mu_{k,l} ~ N(mu_l, sigma_mu_l^2)` and
/// `tau_{k,l} ~ N(tau_l, sigma_tau_l^2)`.
///
/// Unconstrained layout: `mu_cell[1..C]`, `tau_cell[1..C]`,
/// `log sigma_mu_cell[1..C]`, `log sigma_tau_cell[1..C]`, `z_mu[l][k]`,
/// `z_tau[l][k]` (cell-major), logit-scaled `sigma_y[1..K]`.
#[derive(Debug, Clone)]
pub struct InteractionsModel {
    sites: Vec<String>,
    cell_labels: Vec<String>,
    /// `[site][cell][arm]`.
    stats: Vec<Vec<[ArmStats; 2]>>,
    priors: PriorConfig,
    sigma_y: Bounded,
    layout: ParamLayout,
}

impl InteractionsModel {
    pub fn new(cells: &CellDataset, priors: PriorConfig) -> Result<Self> {
        if cells.n_covariates() == 0 {
            return Err(Error::Spec(
                "the interactions family needs at least one interaction covariate".into(),
            ));
        }
        let k = cells.data().n_sites();
        let c = cells.n_cells();
        let mut layout = ParamLayout::default();
        layout.push("mu_cell", c);
        layout.push("tau_cell", c);
        layout.push("log_sigma_mu_cell", c);
        layout.push("log_sigma_tau_cell", c);
        layout.push("z_mu", c * k);
        layout.push("z_tau", c * k);
        layout.push("sigma_y", k);
        Ok(InteractionsModel {
            sites: cells.data().sites().to_vec(),
            cell_labels: (0..c).map(|l| cells.describe(l)).collect(),
            stats: cells.block_stats(),
            sigma_y: Bounded {
                lo: 0.0,
                hi: priors.sigma_y_upper,
            },
            priors,
            layout,
        })
    }

    fn k(&self) -> usize {
        self.sites.len()
    }

    fn c(&self) -> usize {
        self.cell_labels.len()
    }

    /// Descriptions of the cells, e.g. `prior_business=1`, indexed from 0.
    pub fn cell_labels(&self) -> &[String] {
        &self.cell_labels
    }
}

impl TargetDensity for InteractionsModel {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (k, c) = (self.k(), self.c());
        let pr = &self.priors;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let o_tau = c;
        let o_smu = 2 * c;
        let o_stau = 3 * c;
        let o_zmu = 4 * c;
        let o_ztau = o_zmu + c * k;
        let o_sy = o_ztau + c * k;

        let mut lp = 0.0;
        let sy: Vec<f64> = (0..k).map(|i| self.sigma_y.constrain(x[o_sy + i])).collect();
        let mut d_sy = vec![0.0; k];
        for l in 0..c {
            let (mu, tau) = (x[l], x[o_tau + l]);
            let smu = Positive.constrain(x[o_smu + l]);
            let stau = Positive.constrain(x[o_stau + l]);
            for (idx, v) in [(l, mu), (o_tau + l, tau)] {
                let g = normal_lpdf_grad_unchecked(v, 0.0, pr.hypermean_sd);
                lp += g.logpdf;
                grad[idx] += g.d_x;
            }
            let mut d_smu = 0.0;
            let mut d_stau = 0.0;
            for s in [smu, stau] {
                lp += half_cauchy_lpdf_grad_unchecked(s, pr.theta_scale).logpdf;
            }
            d_smu += half_cauchy_lpdf_grad_unchecked(smu, pr.theta_scale).d_x;
            d_stau += half_cauchy_lpdf_grad_unchecked(stau, pr.theta_scale).d_x;
            for i in 0..k {
                let zi_mu = o_zmu + l * k + i;
                let zi_tau = o_ztau + l * k + i;
                let (z1, z2) = (x[zi_mu], x[zi_tau]);
                lp += normal_lpdf_grad_unchecked(z1, 0.0, 1.0).logpdf + normal_lpdf_grad_unchecked(z2, 0.0, 1.0).logpdf;
                grad[zi_mu] -= z1;
                grad[zi_tau] -= z2;
                let mu_kl = mu + smu * z1;
                let tau_kl = tau + stau * z2;
                let [a0, a1] = self.stats[i][l];
                let a = normal_suff_lpdf_grad(a0.n, a0.mean, a0.ss, mu_kl, sy[i]);
                let b = normal_suff_lpdf_grad(a1.n, a1.mean, a1.ss, mu_kl + tau_kl, sy[i]);
                lp += a.logpdf + b.logpdf;
                d_sy[i] += a.d_sd + b.d_sd;
                let gm = a.d_mean + b.d_mean;
                let gt = b.d_mean;
                grad[l] += gm;
                grad[o_tau + l] += gt;
                d_smu += gm * z1;
                d_stau += gt * z2;
                grad[zi_mu] += gm * smu;
                grad[zi_tau] += gt * stau;
            }
            let (j1, dj1) = Positive.log_jacobian(x[o_smu + l]);
            let (j2, dj2) = Positive.log_jacobian(x[o_stau + l]);
            lp += j1 + j2;
            grad[o_smu + l] += d_smu * smu + dj1;
            grad[o_stau + l] += d_stau * stau + dj2;
        }
        for i in 0..k {
            let u = x[o_sy + i];
            let (jac, djac) = self.sigma_y.log_jacobian(u);
            lp += jac - pr.sigma_y_upper.ln();
            grad[o_sy + i] += d_sy[i] * self.sigma_y.dx_du(u) + djac;
        }
        lp
    }

    fn param_names(&self) -> Vec<String> {
        let (k, c) = (self.k(), self.c());
        let mut names = Vec::new();
        names.extend((1..=c).map(|l| format!("mu_cell[{l}]")));
        names.extend((1..=c).map(|l| format!("tau_cell[{l}]")));
        for l in 1..=c {
            names.extend((1..=k).map(|i| format!("mu[{i},{l}]")));
        }
        for l in 1..=c {
            names.extend((1..=k).map(|i| format!("tau[{i},{l}]")));
        }
        names.extend((1..=k).map(|i| format!("sigma_y[{i}]")));
        names.extend((1..=c).map(|l| format!("sigma_mu_cell[{l}]")));
        names.extend((1..=c).map(|l| format!("sigma_tau_cell[{l}]")));
        names
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        let (k, c) = (self.k(), self.c());
        let o_zmu = 4 * c;
        let o_ztau = o_zmu + c * k;
        let o_sy = o_ztau + c * k;
        let mut out = Vec::with_capacity(4 * c + 2 * c * k + k);
        out.extend_from_slice(&x[..2 * c]);
        for l in 0..c {
            let s = x[2 * c + l].exp();
            out.extend((0..k).map(|i| x[l] + s * x[o_zmu + l * k + i]));
        }
        for l in 0..c {
            let s = x[3 * c + l].exp();
            out.extend((0..k).map(|i| x[c + l] + s * x[o_ztau + l * k + i]));
        }
        out.extend((0..k).map(|i| self.sigma_y.constrain(x[o_sy + i])));
        out.extend(x[2 * c..4 * c].iter().map(|u| u.exp()));
        out
    }
}

impl Model for InteractionsModel {
    fn family(&self) -> ModelFamily {
        ModelFamily::Interactions
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn sites(&self) -> &[String] {
        &self.sites
    }
}
