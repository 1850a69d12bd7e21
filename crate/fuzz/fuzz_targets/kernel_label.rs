#![no_main]

use kmmr::kernels::KernelSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(k) = s.parse::<KernelSpec>() {
        // accepted labels re-render to a label that parses to the same kernel
        let again: KernelSpec = k.label().parse().expect("rendered label parses");
        assert_eq!(again, k);
    }
});
