#![no_main]

use bhm_core::data::parse_summaries;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for outcome in [None, Some("profit")] {
        if let Ok(s) = parse_summaries(data, outcome, "fuzz") {
            assert!(s.n_sites() >= 2);
            assert!(s.se_tau().iter().all(|v| *v > 0.0 && v.is_finite()));
            assert!(s.tau_hat().iter().all(|v| v.is_finite()));
        }
    }
});
