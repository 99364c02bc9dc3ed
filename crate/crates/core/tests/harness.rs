use std::fs;
use std::path::Path;

use sls_core::harness::{
    compare, emit_stepsize_trace, load_config, load_run_dir, parse_config, read_summary_csv,
    run_all, run_experiment,
};

fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn shipped_configs_are_valid() {
    let mut names = Vec::new();
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfgs = load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            names.extend(cfgs.into_iter().map(|c| c.name));
        }
    }
    assert!(names.iter().any(|n| n == "majority-plasls"), "{names:?}");
}

#[test]
fn single_seed_summary_has_zero_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let text = "task = \"quadratic\"\noptimizer = \"sgdsls\"\nseeds = 1\nepochs = 2\n";
    let cfgs = parse_config(text, "quad", dir.path()).unwrap();
    let rows = run_all(&cfgs).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].accuracy, None);
    assert_eq!(rows[0].final_ema_loss.unwrap().1, 0.0);

    let csv = fs::read_to_string(cfgs[0].out.join("summary.csv")).unwrap();
    assert_eq!(read_summary_csv(&csv).unwrap(), rows);
    let runs = load_run_dir(cfgs[0].run_dir()).unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0].records.len(), 20);
}

#[test]
fn trace_follows_units_through_a_merge() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        "task = \"blobs\"\nn = 200\nd = 6\nmodel = \"mlp\"\ndepth = 3\noptimizer = \"plasls\"\n\
                partition = \"per_layer:3\"\nmerge_threshold = 10.0\nseeds = 1\nepochs = 1\n";
    let cfgs = parse_config(text, "merging", dir.path()).unwrap();
    let runs = run_experiment(&cfgs[0]).unwrap();
    let merges: Vec<&str> = runs[0]
        .records
        .iter()
        .filter_map(|r| r.merge.as_deref())
        .collect();
    assert_eq!(merges.len(), 2, "{merges:?}");
    assert!(runs[0].records.iter().any(|r| r.merge_warning));
    let last = runs[0].records.last().unwrap();
    assert_eq!(last.unit_etas.len(), 1);

    let trace = fs::read_to_string(emit_stepsize_trace(cfgs[0].run_dir()).unwrap()).unwrap();
    assert!(trace.lines().any(|l| l.contains(merges[1])), "{trace}");
}

#[test]
fn comparing_an_experiment_with_itself() {
    let dir = tempfile::tempdir().unwrap();
    let text = "task = \"blobs\"\nn = 100\nd = 4\nepochs = 1\nseeds = 2\n\
                [a]\noptimizer = \"adamsls\"\n[b]\noptimizer = \"adamsls\"\n";
    let cfgs = parse_config(text, "self", dir.path()).unwrap();
    let text = fs::read_to_string(compare(&cfgs).unwrap()).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,a_mean,a_stderr,b_mean,b_stderr"
    );
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1..3], cells[3..5]);
    }
}

#[test]
fn compare_rejects_mismatched_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let text = "task = \"blobs\"\nn = 100\nd = 4\nseeds = 1\n\
                [a]\noptimizer = \"adamsls\"\nepochs = 1\n[b]\noptimizer = \"adam\"\nepochs = 2\n";
    let cfgs = parse_config(text, "mismatch", dir.path()).unwrap();
    assert!(compare(&cfgs).is_err());
}
