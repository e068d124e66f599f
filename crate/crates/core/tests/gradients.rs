mod common;

use bhm_core::models::{build_target, ModelFamily, ModelSpec, Parameterization};
use common::{data_for, max_gradient_error, random_point, rng};

#[test]
fn every_family_matches_finite_differences() {
    for (fi, family) in ModelFamily::ALL.into_iter().enumerate() {
        let data = data_for(family, 40 + fi as u64);
        let model = build_target(&ModelSpec::new(family), &data).unwrap();
        let mut r = rng(7 + fi as u64);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = random_point(&mut r, model.dim(), 1.5);
            worst = worst.max(max_gradient_error(model.as_ref(), &x));
        }
        assert!(worst < 1e-6, "{family}: worst relative error {worst:e}");
    }
}

#[test]
fn layouts_partition_the_vector() {
    for family in ModelFamily::ALL {
        let model = build_target(&ModelSpec::new(family), &data_for(family, 3)).unwrap();
        assert!(model.layout().is_partition(), "{family}");
        let x = vec![0.1; model.dim()];
        assert_eq!(model.constrain(&x).len(), model.param_names().len(), "{family}");
    }
}

#[test]
fn centered_kernels_match_finite_differences() {
    for (fi, family) in ModelFamily::ALL.into_iter().enumerate() {
        if family == ModelFamily::Interactions {
            continue;
        }
        let data = data_for(family, 60 + fi as u64);
        let spec = ModelSpec::new(family).with_parameterization(Parameterization::Centered);
        let model = build_target(&spec, &data).unwrap();
        assert!(model.layout().is_partition(), "{family}");
        let mut r = rng(80 + fi as u64);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = random_point(&mut r, model.dim(), 1.5);
            worst = worst.max(max_gradient_error(model.as_ref(), &x));
        }
        assert!(worst < 1e-6, "{family}: worst relative error {worst:e}");
    }
}

#[test]
fn centered_interactions_are_refused() {
    let spec = ModelSpec::new(ModelFamily::Interactions).with_parameterization(Parameterization::Centered);
    assert!(build_target(&spec, &data_for(ModelFamily::Interactions, 1)).is_err());
}
