#![no_main]

use libfuzzer_sys::fuzz_target;
use sls_core::harness::{read_run, render_run};

fuzz_target!(|data: &[u8]| {
    if let Ok(run) = read_run(data) {
        let wall = run.records.iter().any(|r| r.wall_ms.is_some());
        let text = render_run(&run.meta, &run.records, wall);
        let again = read_run(text.as_bytes()).expect("rendered run must parse");
        assert_eq!(again.records.len(), run.records.len());
    }
});
