#![no_main]

use bhm_core::data::{parse_microdata, MicroSchema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let schema = MicroSchema::new("y").with_covariates(["pb"]);
    if let Ok(m) = parse_microdata(data, &schema, "fuzz") {
        assert_eq!(m.outcome().len(), m.n_rows());
        assert!(m.outcome().iter().all(|y| y.is_finite()));
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let again = parse_microdata(buf.as_slice(), &schema, "fuzz").unwrap();
        assert_eq!(again.n_rows(), m.n_rows());
        assert_eq!(again.sites(), m.sites());
    }
});
