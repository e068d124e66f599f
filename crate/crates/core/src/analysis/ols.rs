use serde::Serialize;

use crate::data::{ArmStats, MicroDataset};

/// Estimate and heteroskedasticity-robust (HC1) standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OlsEstimate {
    pub estimate: f64,
    pub se: f64,
    pub n: usize,
}

/// Regression of `y` on an intercept and the treatment dummy, written in
/// terms of arm statistics. The slope is the difference in means; its HC1
/// variance is `n/(n-2) * (SS1/n1^2 + SS0/n0^2)`.
///
/// Returns `None` when an arm has fewer than two observations or the
/// standard error is zero.
pub fn diff_in_means_hc1(control: &ArmStats, treated: &ArmStats) -> Option<OlsEstimate> {
    let (n0, n1) = (control.n, treated.n);
    if n0 < 2.0 || n1 < 2.0 {
        return None;
    }
    let n = n0 + n1;
    let var = n / (n - 2.0) * (treated.ss / (n1 * n1) + control.ss / (n0 * n0));
    if !(var > 0.0) || !var.is_finite() {
        return None;
    }
    Some(OlsEstimate {
        estimate: treated.mean - control.mean,
        se: var.sqrt(),
        n: n as usize,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteOls {
    pub site: String,
    /// `None` when the site was skipped.
    pub result: Option<OlsEstimate>,
    pub skipped: bool,
}

/// No-pooling per-site estimates and the full-pooling regression.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OlsComparators {
    pub sites: Vec<SiteOls>,
    pub pooled: Option<OlsEstimate>,
}

impl OlsComparators {
    /// Per-site estimates, with `NaN` where the site was skipped.
    pub fn estimates(&self) -> Vec<f64> {
        self.sites.iter().map(|s| s.result.map_or(f64::NAN, |r| r.estimate)).collect()
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        self.sites.iter().map(|s| s.result.map_or(f64::NAN, |r| r.se)).collect()
    }

    pub fn n_skipped(&self) -> usize {
        self.sites.iter().filter(|s| s.skipped).count()
    }
}

fn merge(a: &ArmStats, b: &ArmStats) -> ArmStats {
    let n = a.n + b.n;
    if n == 0.0 {
        return ArmStats::default();
    }
    let delta = b.mean - a.mean;
    ArmStats {
        n,
        mean: a.mean + delta * b.n / n,
        ss: a.ss + b.ss + delta * delta * a.n * b.n / n,
    }
}

pub fn ols_comparators(data: &MicroDataset) -> OlsComparators {
    let stats = data.site_arm_stats();
    let sites = data
        .sites()
        .iter()
        .zip(&stats)
        .map(|(site, [c, t])| {
            let result = diff_in_means_hc1(c, t);
            if result.is_none() {
                log::warn!("site {site}: degenerate treatment arm, no OLS estimate");
            }
            SiteOls {
                site: site.clone(),
                result,
                skipped: result.is_none(),
            }
        })
        .collect();
    let (c, t) = stats
        .iter()
        .fold((ArmStats::default(), ArmStats::default()), |(c, t), [sc, st]| (merge(&c, sc), merge(&t, st)));
    OlsComparators {
        sites,
        pooled: diff_in_means_hc1(&c, &t),
    }
}
