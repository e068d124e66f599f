#![no_main]

use bhm_core::sampler::PosteriorDraws;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = PosteriorDraws::read_csv(data, 0) {
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let again = PosteriorDraws::read_csv(buf.as_slice(), 0).unwrap();
        assert_eq!(again.names(), d.names());
        assert_eq!(again.n_chains(), d.n_chains());
        assert_eq!(again.n_iters(), d.n_iters());
    }
});
