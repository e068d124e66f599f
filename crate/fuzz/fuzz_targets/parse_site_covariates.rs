#![no_main]

use bhm_core::data::{parse_site_covariates, standardize_columns};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = parse_site_covariates(data, "fuzz") {
        assert!(t.n_covariates() > 0);
        if let Ok((z, _)) = standardize_columns(&t) {
            assert_eq!(z.n_sites(), t.n_sites());
        }
    }
});
