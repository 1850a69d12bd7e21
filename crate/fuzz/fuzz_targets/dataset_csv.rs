#![no_main]

use kmmr::io::{dataset_to_csv_string, read_dataset_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = read_dataset_csv(data, 0.0, 1.0) {
        let text = dataset_to_csv_string(&ds).expect("dataset writes");
        let back = read_dataset_csv(text.as_bytes(), 0.0, 1.0).expect("written dataset reads back");
        assert_eq!(back, ds);
    }
});
