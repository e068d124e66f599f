#![allow(dead_code)]

use bhm_core::data::{
    build_interaction_cells, standardize_columns, CellOptions, MicroDataset, SiteCovariateTable, SummaryDataset,
};
use bhm_core::models::{ModelData, ModelFamily};
use bhm_core::sampler::TargetDensity;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random microdata: `k` sites, `n` rows per site, one binary covariate `pb`.
pub fn random_micro(seed: u64, k: usize, n: usize) -> MicroDataset {
    let mut r = rng(seed);
    let mut sites = Vec::new();
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut pb = Vec::new();
    for s in 0..k {
        let mu = r.random_range(-5.0..5.0);
        let tau = r.random_range(-3.0..3.0);
        let sd = r.random_range(0.5..3.0);
        let noise = Normal::new(0.0, sd).unwrap();
        for i in 0..n {
            sites.push(format!("{}", s + 1));
            let ti = (i % 2) as u8;
            let bi = ((i / 2) % 2) as u8;
            t.push(ti);
            pb.push(bi);
            y.push(mu + tau * ti as f64 + 2.0 * bi as f64 + noise.sample(&mut r));
        }
    }
    MicroDataset::new("y", &sites, t, y, vec!["pb".into()], vec![pb]).unwrap()
}

pub fn random_summary(seed: u64, k: usize, with_mu: bool) -> SummaryDataset {
    let mut r = rng(seed);
    let sites = (1..=k).map(|i| i.to_string()).collect();
    let tau = (0..k).map(|_| r.random_range(-5.0..5.0)).collect();
    let se = (0..k).map(|_| r.random_range(0.5..2.0)).collect();
    let mu = with_mu.then(|| {
        (
            (0..k).map(|_| r.random_range(0.0..20.0)).collect(),
            (0..k).map(|_| r.random_range(0.5..2.0)).collect(),
        )
    });
    SummaryDataset::new(sites, tau, se, mu).unwrap()
}

pub fn random_covariates(seed: u64, sites: &[String], m: usize) -> SiteCovariateTable {
    let mut r = rng(seed);
    let names = (1..=m).map(|i| format!("x{i}")).collect();
    let values = sites.iter().map(|_| (0..m).map(|_| r.random_range(-3.0..3.0)).collect()).collect();
    let raw = SiteCovariateTable::new(sites.to_vec(), names, values).unwrap();
    standardize_columns(&raw).unwrap().0
}

/// Model data suitable for each family.
pub fn data_for(family: ModelFamily, seed: u64) -> ModelData {
    match family {
        ModelFamily::RubinSummary => ModelData::Summary(random_summary(seed, 5, false)),
        ModelFamily::JointSummary => ModelData::Summary(random_summary(seed, 5, true)),
        ModelFamily::FullDataJoint | ModelFamily::FullDataIndependent => {
            ModelData::Micro(random_micro(seed, 4, 40))
        }
        ModelFamily::Interactions => {
            let m = random_micro(seed, 4, 40);
            ModelData::Cells(build_interaction_cells(&m, &["pb".to_string()], CellOptions::default()).unwrap())
        }
        ModelFamily::SiteRidge => {
            let m = random_micro(seed, 5, 40);
            let x_tau = random_covariates(seed + 1, m.sites(), 3);
            let x_mu = random_covariates(seed + 2, m.sites(), 2);
            ModelData::Ridge { data: m, x_mu, x_tau }
        }
    }
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences with step `1e-6` on unit-scaled inputs.
pub fn max_gradient_error<T: TargetDensity + ?Sized>(target: &T, x: &[f64]) -> f64 {
    let d = target.dim();
    let mut g = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    target.log_density_grad(x, &mut g);
    let mut xp = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let h = 1e-6 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let up = target.log_density_grad(&xp, &mut scratch);
        xp[i] = x[i] - h;
        let dn = target.log_density_grad(&xp, &mut scratch);
        xp[i] = x[i];
        let fd = (up - dn) / (2.0 * h);
        let err = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1.0);
        worst = worst.max(err);
    }
    worst
}

pub fn random_point(r: &mut ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    (0..d).map(|_| r.random_range(-radius..radius)).collect()
}
