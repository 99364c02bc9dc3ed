#![no_main]

use libfuzzer_sys::fuzz_target;
use sls_core::data::{read_csv, CsvSchema};

fuzz_target!(|data: &[u8]| {
    for classes in [None, Some(2)] {
        if let Ok(ds) = read_csv(data, &CsvSchema { classes }) {
            assert!(ds.labels().iter().all(|&y| y < ds.classes()));
        }
    }
});
