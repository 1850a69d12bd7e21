#![no_main]

use kmmr::io::{candidates_csv, read_report_json, to_json_pretty};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(report) = read_report_json(s) {
        let _ = candidates_csv(&report);
        let _ = report.chosen_row();
        if let Ok(text) = to_json_pretty(&report) {
            // non-finite floats serialize as null and may not read back
            if let Ok(back) = read_report_json(&text) {
                assert_eq!(to_json_pretty(&back).ok(), Some(text));
            }
        }
    }
});
