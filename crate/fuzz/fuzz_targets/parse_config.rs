#![no_main]

use std::path::Path;

use bhm_core::config::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let base = Path::new("/fuzz");
    if let Ok(config) = parse_config(text, base) {
        // One pass through the normalized text resolves any default
        // relative path against `base`; after that the text is a fixed point.
        let once = parse_config(&config.to_text(), base).expect("normalized config must parse");
        let twice = parse_config(&once.to_text(), base).expect("normalized config must parse");
        assert_eq!(twice, once);
        assert_eq!(once.families, config.families);
        assert_eq!(once.sampler, config.sampler);
    }
});
