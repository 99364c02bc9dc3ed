#![no_main]

use libfuzzer_sys::fuzz_target;
use sls_core::harness::read_summary_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = read_summary_csv(text);
    }
});
