mod common;

use bhm_core::data::SummaryDataset;
use bhm_core::models::{ModelData, ModelFamily, ModelSpec};
use bhm_core::sampler::{ess_and_mcse, nuts_sample, run_chains, split_rhat, PosteriorDraws, SamplerConfig, TargetDensity};

struct Gaussian {
    mean: Vec<f64>,
    /// Inverse covariance, row-major.
    prec: Vec<f64>,
}

impl TargetDensity for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.dim();
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut lp = 0.0;
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += self.prec[i * d + j] * r[j];
            }
            grad[i] = -s;
            lp -= 0.5 * r[i] * s;
        }
        lp
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn quick(chains: usize, warmup: usize, iters: usize) -> SamplerConfig {
    SamplerConfig {
        chains,
        warmup,
        iters,
        ..SamplerConfig::default()
    }
}

#[test]
fn standard_normal_moments() {
    let target = Gaussian {
        mean: vec![0.0],
        prec: vec![1.0],
    };
    let draws = nuts_sample(&target, &SamplerConfig::default()).unwrap();
    let x = draws.column("x[1]").unwrap();
    let (m, sd) = mean_sd(&x);
    let mcse = draws.diagnostic("x[1]").unwrap().mcse.unwrap();
    assert!(m.abs() < 4.0 * mcse, "mean {m}, mcse {mcse}");
    assert!((sd - 1.0).abs() < 0.05, "sd {sd}");
    assert!(draws.verdict().passed);
}

#[test]
fn correlated_normal_correlation() {
    let rho: f64 = 0.8;
    let det = 1.0 - rho * rho;
    let target = Gaussian {
        mean: vec![1.0, -2.0],
        prec: vec![1.0 / det, -rho / det, -rho / det, 1.0 / det],
    };
    let draws = nuts_sample(&target, &SamplerConfig::default()).unwrap();
    let a = draws.column("x[1]").unwrap();
    let b = draws.column("x[2]").unwrap();
    let (ma, sa) = mean_sd(&a);
    let (mb, sb) = mean_sd(&b);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
    let r = cov / (sa * sb);
    assert!((r - rho).abs() < 0.05, "correlation {r}");
}

#[test]
fn same_seed_same_draws() {
    let target = Gaussian {
        mean: vec![0.0, 0.0],
        prec: vec![1.0, 0.0, 0.0, 4.0],
    };
    let cfg = quick(2, 100, 100);
    let a = nuts_sample(&target, &cfg).unwrap();
    let b = nuts_sample(&target, &SamplerConfig { parallel: false, ..cfg.clone() }).unwrap();
    assert_eq!(a, b);
    let c = nuts_sample(&target, &SamplerConfig { seed: cfg.seed + 1, ..cfg }).unwrap();
    assert_ne!(a.column("x[1]"), c.column("x[1]"));
}

#[test]
fn adding_chains_keeps_existing_chains() {
    let target = Gaussian {
        mean: vec![0.0],
        prec: vec![1.0],
    };
    let two = nuts_sample(&target, &quick(2, 100, 50)).unwrap();
    let three = nuts_sample(&target, &quick(3, 100, 50)).unwrap();
    assert_eq!(two.chain_columns(0)[..2], three.chain_columns(0)[..2]);
}

#[test]
fn conjugate_normal_normal() {
    // y_i ~ N(m, 1), m ~ N(0, 10^2): posterior precision 1/100 + n
    let y = [1.2, 0.4, 2.2, 1.9, 0.7];
    let n = y.len() as f64;
    let prec = 0.01 + n;
    let post_mean = y.iter().sum::<f64>() / prec;
    let post_sd = prec.powf(-0.5);
    let target = Gaussian {
        mean: vec![post_mean],
        prec: vec![prec],
    };
    let draws = nuts_sample(&target, &SamplerConfig::default()).unwrap();
    let d = draws.diagnostic("x[1]").unwrap();
    let mcse = d.mcse.unwrap();
    assert!((d.mean - post_mean).abs() < 4.0 * mcse);
    // sd of the sd estimate is roughly sd / sqrt(2 ess)
    let sd_mcse = post_sd / (2.0 * d.ess.unwrap()).sqrt();
    assert!((d.sd - post_sd).abs() < 4.0 * sd_mcse, "{} vs {}", d.sd, post_sd);
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
fn rubin_toy_converges() {
    let spec = ModelSpec::new(ModelFamily::RubinSummary);
    let draws = run_chains(&spec, &ModelData::Summary(toy()), &SamplerConfig::default()).unwrap();
    assert!(draws.verdict().passed, "{:?}", draws.verdict());
    for d in draws.diagnostics() {
        assert!(d.rhat.unwrap() < 1.1, "{}", d.name);
    }
}

#[test]
fn one_iteration_fails_verdict() {
    let spec = ModelSpec::new(ModelFamily::RubinSummary);
    let draws = run_chains(&spec, &ModelData::Summary(toy()), &quick(4, 10, 1)).unwrap();
    assert!(!draws.verdict().passed);
    assert!(draws.verdict().message.contains("unavailable"));
}

#[test]
fn chain_order_does_not_change_diagnostics() {
    let target = Gaussian {
        mean: vec![0.0],
        prec: vec![1.0],
    };
    let draws = nuts_sample(&target, &quick(3, 100, 200)).unwrap();
    let cols = draws.chain_columns(0);
    let fwd: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let rev: Vec<&[f64]> = cols.iter().rev().map(Vec::as_slice).collect();
    let r1 = split_rhat(&fwd).unwrap();
    let r2 = split_rhat(&rev).unwrap();
    assert!((r1 - r2).abs() < 1e-12);
    let (e1, m1) = ess_and_mcse(&fwd).unwrap();
    let (e2, m2) = ess_and_mcse(&rev).unwrap();
    assert!((e1 - e2).abs() < 1e-9 * e1 && (m1 - m2).abs() < 1e-12);
}

#[test]
fn draws_csv_round_trip() {
    let target = Gaussian {
        mean: vec![0.0, 1.0],
        prec: vec![1.0, 0.0, 0.0, 1.0],
    };
    let draws = nuts_sample(&target, &quick(2, 50, 20)).unwrap();
    let mut buf = Vec::new();
    draws.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("chain,iter,x[1],x[2]\n"));
    let back = PosteriorDraws::read_csv(buf.as_slice(), draws.seed()).unwrap();
    assert_eq!(back.column("x[2]"), draws.column("x[2]"));
    assert_eq!(back.diagnostics(), draws.diagnostics());
}

#[test]
fn invalid_config_is_rejected() {
    let target = Gaussian {
        mean: vec![0.0],
        prec: vec![1.0],
    };
    let bad = SamplerConfig {
        chains: 0,
        target_accept: 1.5,
        ..SamplerConfig::default()
    };
    let err = nuts_sample(&target, &bad).unwrap_err();
    assert!(err.to_string().contains("chains"));
    assert!(err.to_string().contains("target_accept"));
}

#[test]
fn non_finite_target_fails_initialization() {
    struct Nowhere;
    impl TargetDensity for Nowhere {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_grad(&self, _: &[f64], g: &mut [f64]) -> f64 {
            g[0] = 0.0;
            f64::NEG_INFINITY
        }
    }
    let err = nuts_sample(&Nowhere, &quick(1, 10, 10)).unwrap_err();
    assert!(matches!(err, bhm_core::Error::Initialization(_)));
}
