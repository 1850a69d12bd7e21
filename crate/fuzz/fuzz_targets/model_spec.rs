#![no_main]

use kmmr::models::ModelSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = s.parse::<ModelSpec>() {
        let again: ModelSpec = spec.to_string().parse().expect("rendered spec parses");
        assert_eq!(again, spec);
    }
});
