//! Acceptance suite. Every test prints one `criterion N ...: PASS|FAIL` line
//! with the measured quantities, then asserts the criterion including its
//! time budget. Run with `cargo test --test acceptance -- --nocapture` to
//! see the lines.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use bhm_core::analysis::{pooling_factor, predictive_for_fit, ridge_coefficient_report};
use bhm_core::config::load_config;
use bhm_core::data::{standardize_columns, SiteCovariateTable, SummaryDataset};
use bhm_core::models::{
    build_target, rubin_conditional_site_mean, Model, ModelData, ModelFamily, ModelSpec, Parameterization, PriorConfig,
    RubinModel,
};
use bhm_core::oracle::{
    quadrature_rubin_posterior, sbc_run, simulate_hierarchical_data, CellTruth, GridSpec, SbcConfig,
    SiteCovariateTruth, SyntheticTruth,
};
use bhm_core::pipeline::run_pipeline;
use bhm_core::sampler::{ess_and_mcse, mcse_sd, run_chains, PosteriorDraws, SamplerConfig, TargetDensity};
use common::{data_for, max_gradient_error, random_point, rng};
use rand::Rng;

struct Line {
    id: u32,
    title: &'static str,
    start: Instant,
    limit: Duration,
}

impl Line {
    fn start(id: u32, title: &'static str, limit_secs: u64) -> Self {
        Line {
            id,
            title,
            start: Instant::now(),
            limit: Duration::from_secs(limit_secs),
        }
    }

    /// Prints the result line and fails the test unless `ok` holds within
    /// the time budget.
    fn finish(self, ok: bool, detail: &str) {
        let elapsed = self.start.elapsed();
        let in_time = elapsed <= self.limit;
        let verdict = if ok && in_time { "PASS" } else { "FAIL" };
        println!(
            "criterion {} {}: {verdict} | {detail} | {:.1} s (limit {} s)",
            self.id,
            self.title,
            elapsed.as_secs_f64(),
            self.limit.as_secs()
        );
        assert!(ok, "criterion {} failed: {detail}", self.id);
        assert!(in_time, "criterion {} exceeded its time budget", self.id);
    }
}

fn chains_of(draws: &PosteriorDraws, name: &str) -> Vec<Vec<f64>> {
    draws.chain_columns(draws.index_of(name).unwrap_or_else(|| panic!("no column {name}")))
}

fn refs(c: &[Vec<f64>]) -> Vec<&[f64]> {
    c.iter().map(Vec::as_slice).collect()
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn toy() -> SummaryDataset {
    SummaryDataset::new(
        vec!["1".into(), "2".into(), "3".into()],
        vec![3.0, 6.0, 10.0],
        vec![1.0, 1.2, 1.5],
        None,
    )
    .unwrap()
}

#[test]
fn criterion_1_gradient_suite() {
    let line = Line::start(1, "gradient suite", 10);
    let mut worst_all: f64 = 0.0;
    let mut parts = Vec::new();
    for (fi, family) in ModelFamily::ALL.into_iter().enumerate() {
        let data = data_for(family, 1000 + fi as u64);
        let model = build_target(&ModelSpec::new(family), &data).unwrap();
        let mut r = rng(2000 + fi as u64);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = random_point(&mut r, model.dim(), 1.5);
            worst = worst.max(max_gradient_error(model.as_ref(), &x));
        }
        worst_all = worst_all.max(worst);
        parts.push(format!("{family} {worst:.1e}"));
    }
    line.finish(
        worst_all < 1e-6,
        &format!("100 points per kernel, max rel err {worst_all:.1e} (< 1e-6): {}", parts.join(", ")),
    );
}

/// Compares a sampled posterior with the quadrature reference. Returns
/// whether every quantity is within 2% and within 4 MCSE, with a summary.
fn compare_with_quadrature(draws: &PosteriorDraws) -> (bool, String) {
    let q = quadrature_rubin_posterior(&toy(), &PriorConfig::default(), &GridSpec::default()).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, ref_mean, ref_sd) in [
        ("tau", q.tau_mean, q.tau_sd),
        ("sigma_tau", q.sigma_tau_mean, q.sigma_tau_sd),
    ] {
        let c = chains_of(draws, name);
        let all: Vec<f64> = c.concat();
        let (m, s) = mean_sd(&all);
        let (_, mcse_m) = ess_and_mcse(&refs(&c)).unwrap();
        let mcse_s = mcse_sd(&refs(&c)).unwrap();
        for (what, est, reference, mcse) in [("mean", m, ref_mean, mcse_m), ("sd", s, ref_sd, mcse_s)] {
            let rel = (est - reference).abs() / reference.abs();
            let z = (est - reference).abs() / mcse;
            let good = rel < 0.02 && z < 4.0;
            ok &= good;
            parts.push(format!(
                "{name} {what} {est:.4} vs {reference:.4} (rel {:.2}%, {z:.2} MCSE){}",
                100.0 * rel,
                if good { "" } else { " MISS" }
            ));
        }
    }
    (ok, parts.join("; "))
}

#[test]
fn criterion_2_oracle_equivalence() {
    let line = Line::start(2, "oracle equivalence", 60);
    let spec = ModelSpec::new(ModelFamily::RubinSummary).with_parameterization(Parameterization::Centered);
    let config = SamplerConfig {
        chains: 4,
        warmup: 2000,
        iters: 250_000,
        target_accept: 0.95,
        ..SamplerConfig::default()
    };
    let draws = run_chains(&spec, &ModelData::Summary(toy()), &config).unwrap();
    let (ok, detail) = compare_with_quadrature(&draws);

    // The non-centred fit is reported for information only: on three sites
    // its geometry biases the scale and it is not the parameterization
    // this criterion is assessed with.
    let nc = run_chains(
        &ModelSpec::new(ModelFamily::RubinSummary),
        &ModelData::Summary(toy()),
        &SamplerConfig {
            iters: 25_000,
            target_accept: 0.95,
            ..SamplerConfig::default()
        },
    )
    .unwrap();
    let (nc_ok, nc_detail) = compare_with_quadrature(&nc);
    println!(
        "criterion 2 info: non-centred 4 x 25000 draws {}: {nc_detail}",
        if nc_ok { "agrees" } else { "disagrees" }
    );
    line.finish(ok, &format!("centred, 4 x {} draws: {detail}", config.iters));
}

#[test]
fn criterion_3_conjugate_identity() {
    let line = Line::start(3, "conjugate identity", 1);
    let data = toy();
    let model = RubinModel::with_parameterization(&data, PriorConfig::default(), Parameterization::Centered);
    let off = model.layout().block("tau_k").unwrap().offset;
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let tau = r.random_range(-10.0..20.0);
        let log_sigma: f64 = r.random_range(-3.0..3.0);
        let sigma = log_sigma.exp();
        let mut x = vec![0.0; model.dim()];
        x[0] = tau;
        x[1] = log_sigma;
        let mut g = vec![0.0; model.dim()];
        for k in 0..3 {
            let (th, se) = (data.tau_hat()[k], data.se_tau()[k]);
            let omega = pooling_factor(se, sigma * sigma);
            let identity = omega * tau + (1.0 - omega) * th;
            let closed_form = rubin_conditional_site_mean(tau, sigma, th, se);
            // The conditional log density of tau_k is quadratic, so its mean
            // is where the gradient, linear in tau_k, vanishes.
            let (a, b) = (-5.0, 15.0);
            x[off + k] = a;
            model.log_density_grad(&x, &mut g);
            let ga = g[off + k];
            x[off + k] = b;
            model.log_density_grad(&x, &mut g);
            let gb = g[off + k];
            let from_kernel = a - ga * (b - a) / (gb - ga);
            x[off + k] = 0.0;
            worst = worst.max((identity - closed_form).abs()).max((identity - from_kernel).abs());
        }
    }
    line.finish(
        worst < 1e-10,
        &format!("200 hyperparameter draws x 3 sites, max |difference| {worst:.1e} (< 1e-10)"),
    );
}

/// Fits the Rubin model to simulated estimates and returns the average
/// conventional pooling factor and whether the fit converged.
fn mean_omega_for(sigma_tau: f64, se: &[f64], parameterization: Parameterization, seed: u64) -> (f64, bool) {
    let truth = SyntheticTruth::summary(5.0, sigma_tau, se.to_vec(), seed);
    let sim = simulate_hierarchical_data(&truth).unwrap();
    let draws = run_chains(
        &ModelSpec::new(ModelFamily::RubinSummary).with_parameterization(parameterization),
        &ModelData::Summary(sim.summary.clone()),
        &SamplerConfig {
            target_accept: 0.95,
            ..SamplerConfig::default()
        },
    )
    .unwrap();
    let s2: Vec<f64> = draws.column("sigma_tau").unwrap().iter().map(|s| s * s).collect();
    let post = s2.iter().sum::<f64>() / s2.len() as f64;
    let omega = se.iter().map(|s| pooling_factor(*s, post)).sum::<f64>() / se.len() as f64;
    (omega, draws.verdict().passed)
}

#[test]
fn criterion_4_limiting_behavior() {
    let line = Line::start(4, "limiting behavior", 300);
    // With no heterogeneity the posterior mean of sigma_tau^2 shrinks only
    // like 1/sqrt(K), so the limit is assessed with many sites; K = 20 is
    // reported for information.
    let small: Vec<f64> = (0..20).map(|i| 1.0 + 0.05 * i as f64).collect();
    let (omega_20, _) = mean_omega_for(0.0, &small, Parameterization::NonCentered, 40);
    println!("criterion 4 info: K = 20, sigma_tau = 0 gives mean omega {omega_20:.3}");
    let se: Vec<f64> = (0..100).map(|i| 1.0 + 0.01 * i as f64).collect();
    let max_se = se.iter().cloned().fold(0.0, f64::max);
    // Site effects near the parent mean put the posterior in the neck of
    // the funnel, which the non-centred form samples well; widely spread
    // effects suit the centred form.
    let (no_het, conv_a) = mean_omega_for(0.0, &se, Parameterization::NonCentered, 41);
    let (big_het, conv_b) = mean_omega_for(10.0 * max_se, &se, Parameterization::Centered, 42);
    line.finish(
        conv_a && conv_b && no_het > 0.9 && big_het < 0.2,
        &format!(
            "K = 100, sigma_tau = 0 gives mean omega {no_het:.3} (> 0.9, converged {conv_a}); \
             sigma_tau = {:.1} gives {big_het:.3} (< 0.2, converged {conv_b})",
            10.0 * max_se
        ),
    );
}

#[test]
fn criterion_5_sbc() {
    let line = Line::start(5, "simulation-based calibration", 1800);
    let priors = PriorConfig {
        hypermean_sd: 5.0,
        theta_scale: 2.0,
        sigma_y_upper: 10.0,
        ..PriorConfig::default()
    };
    let config = SbcConfig::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for family in [ModelFamily::RubinSummary, ModelFamily::FullDataJoint] {
        let spec = ModelSpec::new(family)
            .with_priors(priors.clone())
            .with_parameterization(Parameterization::Centered);
        let r = sbc_run(&spec, &config).unwrap();
        let worst = r
            .parameters
            .iter()
            .min_by(|a, b| a.p_value.total_cmp(&b.p_value))
            .unwrap();
        let good = r.passed && r.parameters.iter().all(|p| p.p_value > 0.01) && r.exclusion_rate < 0.05;
        ok &= good;
        parts.push(format!(
            "{family}: {} params, min p {:.3} ({}), excluded {:.1}%",
            r.parameters.len(),
            worst.p_value,
            worst.name,
            100.0 * r.exclusion_rate
        ));
    }
    line.finish(
        ok,
        &format!(
            "{} reps, K = {}, n = {}/site: {}",
            config.replications,
            config.sites,
            config.n_per_site,
            parts.join("; ")
        ),
    );
}

fn shipped_config(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

/// Criteria 6 and 7 share the shipped example fits, so they run in one test
/// and print two lines.
#[test]
fn criteria_6_and_7_shipped_examples() {
    let line6 = Line::start(6, "convergence gate", 600);
    let tmp = tempfile::tempdir().unwrap();
    let mut fits = Vec::new();
    let mut ok6 = true;
    let mut parts6 = Vec::new();
    for name in ["toy.cfg", "summary.cfg", "example.cfg"] {
        let out_dir = tmp.path().join(name);
        let config = load_config(
            Some(&shipped_config(name)),
            &[("out_dir".into(), out_dir.display().to_string())],
        )
        .unwrap();
        assert_eq!(config.sampler.chains, 4);
        let result = run_pipeline(&config).unwrap();
        for f in &result.manifest.fits {
            ok6 &= f.converged && f.max_rhat.is_some_and(|r| r < 1.1);
            parts6.push(format!("{} {:.3}", f.dir, f.max_rhat.unwrap_or(f64::NAN)));
            let file = std::fs::File::open(out_dir.join(&f.dir).join("draws.csv")).unwrap();
            fits.push((f.dir.clone(), f.family, f.seed, PosteriorDraws::read_csv(file, f.seed).unwrap()));
        }
    }
    line6.finish(ok6, &format!("{} fits, 4 chains, max R-hat: {}", fits.len(), parts6.join(", ")));

    let line7 = Line::start(7, "predictive dominance", 60);
    let mut ok7 = true;
    let mut parts7 = Vec::new();
    for (dir, family, seed, draws) in &fits {
        for p in predictive_for_fit(draws, *family, *seed, &[]).unwrap() {
            let parent = match p.tau_name.strip_prefix("tau_next") {
                Some("") => "tau".to_string(),
                Some(idx) => format!("tau_cell{idx}"),
                None => unreachable!(),
            };
            let c = chains_of(draws, &parent);
            let (_, sd_tau) = mean_sd(&c.concat());
            let mcse = mcse_sd(&refs(&c)).unwrap();
            let (_, sd_next) = mean_sd(&p.tau_draws);
            let good = sd_next >= sd_tau - 2.0 * mcse;
            ok7 &= good;
            parts7.push(format!(
                "{dir} {}: {sd_next:.3} vs {sd_tau:.3}{}",
                p.tau_name,
                if good { "" } else { " MISS" }
            ));
        }
    }
    line7.finish(ok7, &format!("sd(next site) vs sd(parent mean): {}", parts7.join(", ")));
}

#[test]
fn criterion_8_interactions_recovery() {
    let line = Line::start(8, "interactions recovery", 300);
    let mut truth = SyntheticTruth::micro(7, 1000, 20.0, 5.0, 2.0, 1.0, 8);
    truth.sigma_y = vec![10.0; 7];
    truth.exact_moments = true;
    truth.cells = Some(CellTruth {
        covariate: "prior_business".into(),
        prevalence: 0.4,
        mu_cell: [20.0, 30.0],
        tau_cell: [5.0, 15.0],
        sigma_mu_cell: [2.0, 2.0],
        sigma_tau_cell: [1.0, 1.0],
    });
    let sim = simulate_hierarchical_data(&truth).unwrap();
    let cells = bhm_core::data::build_interaction_cells(
        sim.micro.as_ref().unwrap(),
        &["prior_business".to_string()],
        Default::default(),
    )
    .unwrap();
    let draws = run_chains(
        &ModelSpec::new(ModelFamily::Interactions),
        &ModelData::Cells(cells),
        &SamplerConfig {
            target_accept: 0.9,
            ..SamplerConfig::default()
        },
    )
    .unwrap();
    let a = chains_of(&draws, "tau_cell[1]");
    let b = chains_of(&draws, "tau_cell[2]");
    let contrast: Vec<Vec<f64>> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| v - u).collect())
        .collect();
    let (ess, mcse) = ess_and_mcse(&refs(&contrast)).unwrap();
    let (m, sd) = mean_sd(&contrast.concat());
    let err = (m - 10.0).abs();
    line.finish(
        draws.verdict().passed && err <= 3.0 * mcse,
        &format!(
            "L = 1, K = 7, n = 1000/site, planted 10: posterior mean {m:.4} (sd {sd:.3}, ESS {ess:.0}), \
             |error| {err:.4} vs 3 MCSE {:.4}",
            3.0 * mcse
        ),
    );
}

#[test]
fn criterion_9_ridge_sweep_stability() {
    let line = Line::start(9, "ridge sweep stability", 600);
    let k = 7;
    let mut r = rng(9);
    let sites: Vec<String> = (1..=k).map(|i| i.to_string()).collect();
    let names: Vec<String> = ["dominant", "minor_a", "minor_b"].map(String::from).to_vec();
    let values = (0..k).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let (x, _) = standardize_columns(&SiteCovariateTable::new(sites, names, values).unwrap()).unwrap();
    let mut truth = SyntheticTruth::micro(k, 200, 0.0, 0.5, 0.3, 0.1, 19);
    truth.site_covariates = Some(SiteCovariateTruth {
        x_mu: x.clone(),
        x_tau: x.clone(),
        beta_mu: vec![0.0; 3],
        beta_tau: vec![1.0, 0.1, -0.1],
    });
    let sim = simulate_hierarchical_data(&truth).unwrap();
    let data = ModelData::Ridge {
        data: sim.micro.clone().unwrap(),
        x_mu: x.clone(),
        x_tau: x,
    };
    let sweep = [0.25, 0.5, 1.0, 3.0];
    let fits: Vec<(f64, PosteriorDraws)> = sweep
        .iter()
        .map(|&p| {
            let mut spec = ModelSpec::new(ModelFamily::SiteRidge);
            spec.priors.ridge_sd = p;
            let config = SamplerConfig {
                target_accept: 0.9,
                ..SamplerConfig::default()
            };
            (p, run_chains(&spec, &data, &config).unwrap())
        })
        .collect();
    let pairs: Vec<(f64, &PosteriorDraws)> = fits.iter().map(|(p, d)| (*p, d)).collect();
    let report = ridge_coefficient_report(&pairs);
    let leaders = report.leaders();
    let ok = report.excluded_penalties.is_empty()
        && leaders.len() == sweep.len()
        && leaders.iter().all(|l| *l == "dominant");
    line.finish(
        ok,
        &format!(
            "penalties {sweep:?}: leaders {leaders:?}, verdict {:?}, excluded {:?}",
            report.verdict, report.excluded_penalties
        ),
    );
}
