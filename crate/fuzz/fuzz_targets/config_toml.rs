#![no_main]

use kmmr::config::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

const MAX_INPUT: usize = 16 * 1024;

fuzz_target!(|data: &[u8]| {
    if data.len() > MAX_INPUT {
        return;
    }
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_toml_str(s) {
        let _ = cfg.validate();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).expect("serialized config parses");
        assert_eq!(again.fingerprint(), cfg.fingerprint());
    }
});
