use std::fs;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use sls_core::data::{read_csv, CsvSchema};
use sls_core::harness::{parse_config, read_run, read_summary_csv, render_run};

fn corpus(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fuzz/corpus")
        .join(target);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus {target}");
    files
}

fn run_round_trip(data: &[u8]) -> bool {
    let Ok(run) = read_run(data) else {
        return false;
    };
    let wall = run.records.iter().any(|r| r.wall_ms.is_some());
    let text = render_run(&run.meta, &run.records, wall);
    let again = read_run(text.as_bytes()).expect("rendered run must parse");
    assert_eq!(again.records.len(), run.records.len());
    true
}

#[test]
fn corpus_seeds_are_handled() {
    let mut parsed = 0;
    for f in corpus("read_csv") {
        parsed += read_csv(
            fs::read(&f).unwrap().as_slice(),
            &CsvSchema { classes: None },
        )
        .is_ok() as usize;
    }
    for f in corpus("parse_config") {
        parsed +=
            parse_config(&fs::read_to_string(&f).unwrap(), "seed", Path::new(".")).is_ok() as usize;
    }
    for f in corpus("read_run") {
        assert!(run_round_trip(&fs::read(&f).unwrap()), "{}", f.display());
        parsed += 1;
    }
    for f in corpus("read_summary_csv") {
        read_summary_csv(&fs::read_to_string(&f).unwrap()).unwrap();
        parsed += 1;
    }
    assert!(parsed >= 8, "{parsed}");
}

fn mutated(seed: Vec<u8>) -> impl Strategy<Value = Vec<u8>> {
    let len = seed.len();
    prop::collection::vec((0..len.max(1), any::<u8>()), 0..8).prop_map(move |edits| {
        let mut s = seed.clone();
        for (i, b) in edits {
            if i < s.len() {
                s[i] = b;
            }
        }
        s
    })
}

fn first_seed(target: &str) -> Vec<u8> {
    fs::read(&corpus(target)[0]).unwrap()
}

proptest! {
    #[test]
    fn csv_reader_never_panics(data in mutated(first_seed("read_csv"))) {
        let _ = read_csv(data.as_slice(), &CsvSchema { classes: Some(2) });
    }

    #[test]
    fn config_parser_never_panics(data in mutated(first_seed("parse_config"))) {
        if let Ok(text) = std::str::from_utf8(&data) {
            let _ = parse_config(text, "fuzz", Path::new("."));
        }
    }

    #[test]
    fn run_reader_round_trips(data in mutated(first_seed("read_run"))) {
        run_round_trip(&data);
    }

    #[test]
    fn summary_reader_never_panics(data in mutated(first_seed("read_summary_csv"))) {
        if let Ok(text) = std::str::from_utf8(&data) {
            let _ = read_summary_csv(text);
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(data in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = read_csv(data.as_slice(), &CsvSchema { classes: None });
        run_round_trip(&data);
        if let Ok(text) = std::str::from_utf8(&data) {
            let _ = parse_config(text, "fuzz", Path::new("."));
            let _ = read_summary_csv(text);
        }
    }
}
