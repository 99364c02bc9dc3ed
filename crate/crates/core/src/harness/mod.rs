//! Experiment driver: config files in, per-run CSV logs and summary tables
//! out.
//!
//! Each experiment trains `seeds` independent runs. Run `k` writes
//! `out/<experiment>/seed-<seed+k>.csv`; [`run_all`] then writes
//! `out/summary.csv` (full precision) and `out/summary.txt` (four decimals).
//! Every summary value can be recomputed from the run files.

mod config;
mod record;
mod report;
mod run;

pub use config::{load_config, parse_config, validate, ExperimentConfig, ModelSpec, TaskSpec};
pub use record::{
    fmt_f64, load_run, read_run, render_run, RunFile, RunMeta, RunRecord, SCHEMA_VERSION,
};
pub use report::{
    compare, emit_stepsize_trace, load_run_dir, mean_stderr, read_summary_csv, render_comparison,
    render_summary_csv, render_summary_table, render_trace, run_all, summarize, SummaryRow,
};
pub use run::{build_data, run_experiment, run_path, run_seed, TaskData};
