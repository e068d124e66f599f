mod common;

use bhm_core::data::{MicroDataset, SummaryDataset};
use bhm_core::models::{build_target, Model, ModelData, ModelFamily, ModelSpec, PriorConfig, RubinModel};
use bhm_core::sampler::TargetDensity;
use common::{max_gradient_error, random_micro, random_point, random_summary, rng};
use rand::seq::SliceRandom;
use statrs::distribution::{Cauchy, Continuous, Normal};

fn lp(model: &dyn Model, x: &[f64]) -> f64 {
    let mut g = vec![0.0; model.dim()];
    model.log_density_grad(x, &mut g)
}

/// Log density of the non-centred Rubin model written out term by term.
fn naive_rubin(data: &SummaryDataset, priors: &PriorConfig, x: &[f64]) -> f64 {
    let (tau, u) = (x[0], x[1]);
    let sigma = u.exp();
    let mut total = Normal::new(0.0, priors.hypermean_sd).unwrap().ln_pdf(tau)
        + 2f64.ln()
        + Cauchy::new(0.0, priors.theta_scale).unwrap().ln_pdf(sigma)
        + u;
    let std = Normal::new(0.0, 1.0).unwrap();
    for k in 0..data.n_sites() {
        let z = x[2 + k];
        total += std.ln_pdf(z);
        total += Normal::new(tau + sigma * z, data.se_tau()[k]).unwrap().ln_pdf(data.tau_hat()[k]);
    }
    total
}

#[test]
fn rubin_matches_a_term_by_term_density() {
    let priors = PriorConfig::default();
    for seed in 0..5 {
        let data = random_summary(seed, 6, false);
        let model = RubinModel::new(&data, priors.clone());
        let mut r = rng(seed + 100);
        let base = random_point(&mut r, model.dim(), 2.0);
        for _ in 0..20 {
            let x = random_point(&mut r, model.dim(), 2.0);
            let got = lp(&model, &x) - lp(&model, &base);
            let want = naive_rubin(&data, &priors, &x) - naive_rubin(&data, &priors, &base);
            assert!((got - want).abs() < 1e-9 * (1.0 + want.abs()), "{got} vs {want}");
        }
    }
}

/// Relabels sites so that canonical site `k` of the result holds the data of
/// site `perm[k]` of the input.
fn permuted_micro(m: &MicroDataset, perm: &[usize]) -> MicroDataset {
    let mut inverse = vec![0; perm.len()];
    for (new, old) in perm.iter().enumerate() {
        inverse[*old] = new;
    }
    let sites: Vec<String> = m.site_index().iter().map(|s| (inverse[*s] + 1).to_string()).collect();
    let covs = m.covariate_names().to_vec();
    let vals = covs.iter().map(|c| m.covariate(c).unwrap().to_vec()).collect();
    MicroDataset::new("y", &sites, m.treatment().to_vec(), m.outcome().to_vec(), covs, vals).unwrap()
}

/// Moves the per-site blocks of `x` so site `k` of the output takes the
/// coordinates of site `perm[k]`.
fn permute_site_blocks(model: &dyn Model, x: &[f64], perm: &[usize]) -> Vec<f64> {
    let k = perm.len();
    let mut y = x.to_vec();
    for b in model.layout().blocks() {
        if b.len == k && b.name != "beta_mu" && b.name != "beta_tau" {
            for (new, old) in perm.iter().enumerate() {
                y[b.offset + new] = x[b.offset + old];
            }
        }
    }
    y
}

#[test]
fn site_permutation_leaves_the_density_unchanged() {
    for family in [ModelFamily::FullDataJoint, ModelFamily::FullDataIndependent] {
        let m = random_micro(3, 5, 30);
        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut rng(4));
        let spec = ModelSpec::new(family);
        let a = build_target(&spec, &ModelData::Micro(m.clone())).unwrap();
        let b = build_target(&spec, &ModelData::Micro(permuted_micro(&m, &perm))).unwrap();
        let mut r = rng(5);
        for _ in 0..20 {
            let x = random_point(&mut r, a.dim(), 1.5);
            let y = permute_site_blocks(a.as_ref(), &x, &perm);
            assert!((lp(a.as_ref(), &x) - lp(b.as_ref(), &y)).abs() < 1e-8, "{family}");
        }
    }

    let s = random_summary(6, 5, false);
    let mut perm: Vec<usize> = (0..5).collect();
    perm.shuffle(&mut rng(7));
    let p = SummaryDataset::new(
        s.sites().to_vec(),
        perm.iter().map(|i| s.tau_hat()[*i]).collect(),
        perm.iter().map(|i| s.se_tau()[*i]).collect(),
        None,
    )
    .unwrap();
    let a = RubinModel::new(&s, PriorConfig::default());
    let b = RubinModel::new(&p, PriorConfig::default());
    let mut r = rng(8);
    for _ in 0..20 {
        let x = random_point(&mut r, a.dim(), 1.5);
        let y = permute_site_blocks(&a, &x, &perm);
        assert!((lp(&a, &x) - lp(&b, &y)).abs() < 1e-9);
    }
}

#[test]
fn row_order_does_not_matter() {
    let m = random_micro(9, 4, 25);
    let mut order: Vec<usize> = (0..m.n_rows()).collect();
    order.shuffle(&mut rng(10));
    let sites: Vec<String> = order.iter().map(|i| m.sites()[m.site_index()[*i]].clone()).collect();
    let pb = m.covariate("pb").unwrap();
    let shuffled = MicroDataset::new(
        "y",
        &sites,
        order.iter().map(|i| m.treatment()[*i]).collect(),
        order.iter().map(|i| m.outcome()[*i]).collect(),
        vec!["pb".into()],
        vec![order.iter().map(|i| pb[*i]).collect()],
    )
    .unwrap();
    let spec = ModelSpec::new(ModelFamily::FullDataJoint);
    let a = build_target(&spec, &ModelData::Micro(m)).unwrap();
    let b = build_target(&spec, &ModelData::Micro(shuffled)).unwrap();
    let mut r = rng(11);
    for _ in 0..10 {
        let x = random_point(&mut r, a.dim(), 1.5);
        let (la, lb) = (lp(a.as_ref(), &x), lp(b.as_ref(), &x));
        assert!((la - lb).abs() < 1e-8 * (1.0 + la.abs()), "{la} vs {lb}");
    }
}

#[test]
fn independent_parents_equal_joint_at_zero_correlation() {
    let m = ModelData::Micro(random_micro(12, 4, 30));
    let joint = build_target(&ModelSpec::new(ModelFamily::FullDataJoint), &m).unwrap();
    let indep = build_target(&ModelSpec::new(ModelFamily::FullDataIndependent), &m).unwrap();
    let corr = joint.layout().block("corr").unwrap().offset;
    assert_eq!(joint.dim(), indep.dim() + 1);
    let to_joint = |x: &[f64]| {
        let mut y = x[..corr].to_vec();
        y.push(0.0);
        y.extend_from_slice(&x[corr..]);
        y
    };
    let mut r = rng(13);
    let base = random_point(&mut r, indep.dim(), 1.5);
    let offset = lp(joint.as_ref(), &to_joint(&base)) - lp(indep.as_ref(), &base);
    for _ in 0..20 {
        let x = random_point(&mut r, indep.dim(), 1.5);
        let d = lp(joint.as_ref(), &to_joint(&x)) - lp(indep.as_ref(), &x);
        assert!((d - offset).abs() < 1e-8, "{d} vs {offset}");
        let mut gj = vec![0.0; joint.dim()];
        let mut gi = vec![0.0; indep.dim()];
        joint.log_density_grad(&to_joint(&x), &mut gj);
        indep.log_density_grad(&x, &mut gi);
        gj.remove(corr);
        for (a, b) in gj.iter().zip(&gi) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn single_site_microdata_has_a_finite_density_and_exact_gradient() {
    let sites = vec!["only".to_string(); 40];
    let t: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
    let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() + f64::from(t[i])).collect();
    let m = MicroDataset::new_single_site_allowed("y", &sites, t, y).unwrap();
    let model = build_target(&ModelSpec::new(ModelFamily::FullDataJoint), &ModelData::Micro(m)).unwrap();
    let mut r = rng(14);
    for _ in 0..20 {
        let x = random_point(&mut r, model.dim(), 1.5);
        assert!(lp(model.as_ref(), &x).is_finite());
        assert!(max_gradient_error(model.as_ref(), &x) < 1e-6);
    }
}

#[test]
fn family_and_data_must_agree() {
    let s = ModelData::Summary(random_summary(1, 4, false));
    assert!(build_target(&ModelSpec::new(ModelFamily::FullDataJoint), &s).is_err());
    assert!(build_target(&ModelSpec::new(ModelFamily::JointSummary), &s).is_err());
    let m = ModelData::Micro(random_micro(1, 3, 10));
    assert!(build_target(&ModelSpec::new(ModelFamily::RubinSummary), &m).is_err());
}
