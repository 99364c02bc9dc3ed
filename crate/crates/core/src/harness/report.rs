use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::record::{fmt_f64, load_run, RunFile};
use super::run::run_experiment;
use crate::error::{Error, Result};

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
///
/// One value has standard error 0; no values give `None`.
pub fn mean_stderr(xs: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n == 0 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, (var / n as f64).sqrt()))
}

/// One row of the summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub experiment: String,
    pub optimizer: String,
    pub task: String,
    pub seeds_ok: usize,
    pub seeds_failed: usize,
    /// Over successful seeds; `None` without accuracy (quadratic task).
    pub accuracy: Option<(f64, f64)>,
    pub final_ema_loss: Option<(f64, f64)>,
}

const SUMMARY_COLUMNS: &str = "experiment,optimizer,task,seeds_ok,seeds_failed,mean_accuracy,\
stderr_accuracy,mean_final_ema_loss,stderr_final_ema_loss";

/// Summarizes the runs of one experiment. Failed runs are counted but left
/// out of the means.
pub fn summarize(runs: &[RunFile]) -> Result<SummaryRow> {
    let first = runs
        .first()
        .ok_or_else(|| Error::contract("cannot summarize an experiment without runs"))?;
    let ok: Vec<&RunFile> = runs.iter().filter(|r| !r.failed()).collect();
    let acc: Vec<f64> = ok.iter().filter_map(|r| r.final_accuracy()).collect();
    let ema: Vec<f64> = ok.iter().filter_map(|r| r.final_ema_loss()).collect();
    Ok(SummaryRow {
        experiment: first.meta.experiment.clone(),
        optimizer: first.meta.optimizer.clone(),
        task: first.meta.task.clone(),
        seeds_ok: ok.len(),
        seeds_failed: runs.len() - ok.len(),
        accuracy: if acc.len() == ok.len() {
            mean_stderr(&acc)
        } else {
            None
        },
        final_ema_loss: mean_stderr(&ema),
    })
}

fn pair_cells(p: Option<(f64, f64)>) -> (String, String) {
    match p {
        Some((m, s)) => (fmt_f64(m), fmt_f64(s)),
        None => (String::new(), String::new()),
    }
}

/// Machine-readable summary at full precision.
pub fn render_summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_COLUMNS}\n");
    for r in rows {
        let (am, as_) = pair_cells(r.accuracy);
        let (lm, ls) = pair_cells(r.final_ema_loss);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{am},{as_},{lm},{ls}",
            r.experiment, r.optimizer, r.task, r.seeds_ok, r.seeds_failed
        );
    }
    out
}

/// Aligned plain-text table with four decimals.
pub fn render_summary_table(rows: &[SummaryRow]) -> String {
    let cell = |p: Option<(f64, f64)>| match p {
        Some((m, s)) => format!("{m:.4} ± {s:.4}"),
        None => "-".to_string(),
    };
    let mut lines = vec![[
        "experiment".to_string(),
        "optimizer".into(),
        "task".into(),
        "ok/failed".into(),
        "accuracy".into(),
        "final EMA loss".into(),
    ]];
    for r in rows {
        lines.push([
            r.experiment.clone(),
            r.optimizer.clone(),
            r.task.clone(),
            format!("{}/{}", r.seeds_ok, r.seeds_failed),
            cell(r.accuracy),
            cell(r.final_ema_loss),
        ]);
    }
    let widths: Vec<usize> = (0..6)
        .map(|c| {
            lines
                .iter()
                .map(|l| l[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Parses a summary CSV written by [`render_summary_csv`].
pub fn read_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>().join(",") != SUMMARY_COLUMNS {
        return Err(Error::Parse {
            line: 1,
            msg: "unexpected summary header".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| Error::Parse { line, msg };
        let count = |i: usize| {
            rec[i]
                .parse::<usize>()
                .map_err(|_| bad(format!("bad count `{}`", &rec[i])))
        };
        let pair = |i: usize| -> Result<Option<(f64, f64)>> {
            if rec[i].is_empty() && rec[i + 1].is_empty() {
                return Ok(None);
            }
            let f = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("bad number `{s}`")))
            };
            Ok(Some((f(&rec[i])?, f(&rec[i + 1])?)))
        };
        rows.push(SummaryRow {
            experiment: rec[0].to_string(),
            optimizer: rec[1].to_string(),
            task: rec[2].to_string(),
            seeds_ok: count(3)?,
            seeds_failed: count(4)?,
            accuracy: pair(5)?,
            final_ema_loss: pair(7)?,
        });
    }
    Ok(rows)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs every experiment and writes `summary.csv` and `summary.txt` into
/// each output root used. Experiments run one after another; seeds within
/// an experiment run in parallel.
pub fn run_all(cfgs: &[ExperimentConfig]) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        rows.push(summarize(&run_experiment(cfg)?)?);
    }
    let mut roots: Vec<&PathBuf> = cfgs.iter().map(|c| &c.out).collect();
    roots.dedup();
    for root in roots {
        let mine: Vec<SummaryRow> = cfgs
            .iter()
            .zip(&rows)
            .filter(|(c, _)| &c.out == root)
            .map(|(_, r)| r.clone())
            .collect();
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        write_file(&root.join("summary.csv"), &render_summary_csv(&mine))?;
        write_file(&root.join("summary.txt"), &render_summary_table(&mine))?;
    }
    Ok(rows)
}

/// Loads every `seed-*.csv` of a run directory, ordered by seed.
pub fn load_run_dir(dir: impl AsRef<Path>) -> Result<Vec<RunFile>> {
    let dir = dir.as_ref();
    let mut seeded = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if let Some(seed) = name
            .strip_prefix("seed-")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            seeded.push((seed, path));
        }
    }
    if seeded.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no seed-*.csv runs in {}",
            dir.display()
        )));
    }
    seeded.sort();
    seeded.into_iter().map(|(_, p)| load_run(p)).collect()
}

/// Per-step mean and standard error of the EMA loss over the successful
/// runs of each experiment, side by side.
pub fn render_comparison(experiments: &[(String, Vec<RunFile>)]) -> Result<String> {
    let mut columns = Vec::new();
    let mut steps = None;
    for (name, runs) in experiments {
        let ok: Vec<&RunFile> = runs.iter().filter(|r| !r.failed()).collect();
        let len = ok.first().map_or(0, |r| r.records.len());
        if ok.iter().any(|r| r.records.len() != len) {
            return Err(Error::contract(format!(
                "runs of `{name}` have different lengths"
            )));
        }
        match steps {
            None => steps = Some(len),
            Some(s) if s != len => {
                return Err(Error::contract(format!(
                    "`{name}` has {len} steps, earlier experiments have {s}"
                )))
            }
            _ => {}
        }
        let stats: Vec<Option<(f64, f64)>> = (0..len)
            .map(|i| mean_stderr(&ok.iter().map(|r| r.records[i].ema_loss).collect::<Vec<_>>()))
            .collect();
        columns.push((name.clone(), stats));
    }
    let mut out = String::from("step");
    for (name, _) in &columns {
        let _ = write!(out, ",{name}_mean,{name}_stderr");
    }
    out.push('\n');
    for i in 0..steps.unwrap_or(0) {
        let _ = write!(out, "{}", i + 1);
        for (_, stats) in &columns {
            let (m, s) = pair_cells(stats[i]);
            let _ = write!(out, ",{m},{s}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Runs the experiments and writes `comparison.csv` into the output root of
/// the first one. All experiments must share task and budget.
pub fn compare(cfgs: &[ExperimentConfig]) -> Result<PathBuf> {
    let first = cfgs
        .first()
        .ok_or_else(|| Error::contract("compare needs at least one experiment"))?;
    for c in &cfgs[1..] {
        if c.task != first.task
            || c.subsample != first.subsample
            || c.eval_fraction != first.eval_fraction
        {
            return Err(Error::contract(format!(
                "`{}` and `{}` use different tasks",
                first.name, c.name
            )));
        }
        if c.epochs != first.epochs || c.batch_size != first.batch_size || c.seeds != first.seeds {
            return Err(Error::contract(format!(
                "`{}` and `{}` have different budgets (epochs, batch size or seeds)",
                first.name, c.name
            )));
        }
    }
    let mut experiments = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        experiments.push((cfg.name.clone(), run_experiment(cfg)?));
    }
    let text = render_comparison(&experiments)?;
    fs::create_dir_all(&first.out).map_err(|e| Error::io(&first.out, e))?;
    let path = first.out.join("comparison.csv");
    write_file(&path, &text)?;
    Ok(path)
}

/// Long-format step-size trajectories: one row per run, step and unit, with
/// the mean over that step's units alongside.
pub fn render_trace(runs: &[RunFile]) -> Result<String> {
    let mut out = String::from("seed,step,unit,eta,mean_eta\n");
    for run in runs {
        if run.meta.optimizer == "adam" {
            return Err(Error::contract(format!(
                "run with seed {} used adam, which keeps no step sizes",
                run.meta.seed
            )));
        }
        for r in &run.records {
            if r.unit_etas.is_empty() {
                continue;
            }
            let mean = r.unit_etas.iter().map(|(_, e)| e).sum::<f64>() / r.unit_etas.len() as f64;
            for (unit, eta) in &r.unit_etas {
                let _ = writeln!(
                    out,
                    "{},{},{unit},{},{}",
                    run.meta.seed,
                    r.step,
                    fmt_f64(*eta),
                    fmt_f64(mean)
                );
            }
        }
    }
    Ok(out)
}

/// Writes `trace.csv` next to the runs in `dir`.
pub fn emit_stepsize_trace(dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let text = render_trace(&load_run_dir(dir)?)?;
    let path = dir.join("trace.csv");
    write_file(&path, &text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::record::{RunMeta, RunRecord};

    #[test]
    fn mean_stderr_by_hand() {
        assert_eq!(mean_stderr(&[]), None);
        assert_eq!(mean_stderr(&[0.25]), Some((0.25, 0.0)));
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        // sample variance 5/3, stderr sqrt(5/12)
        assert!((s - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    fn run(seed: u64, optimizer: &str, losses: &[f64], etas: &[&[f64]]) -> RunFile {
        let mut ema = None;
        let records = losses
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let e = ema.map_or(l, |p: f64| 0.99 * p + 0.01 * l);
                ema = Some(e);
                RunRecord {
                    step: i + 1,
                    epoch: 1,
                    loss: l,
                    ema_loss: e,
                    lr: 0.1,
                    backtracks: 0,
                    exhausted: false,
                    forward_passes: 1,
                    backward_passes: 1,
                    unit_etas: etas
                        .get(i)
                        .map(|es| {
                            es.iter()
                                .enumerate()
                                .map(|(u, &x)| (format!("u{u}"), x))
                                .collect()
                        })
                        .unwrap_or_default(),
                    merge: None,
                    merge_warning: false,
                    eval_accuracy: (i + 1 == losses.len()).then_some(0.5 + seed as f64 / 10.0),
                    wall_ms: None,
                }
            })
            .collect();
        RunFile {
            meta: RunMeta {
                experiment: "e".into(),
                optimizer: optimizer.into(),
                task: "blobs".into(),
                seed,
            },
            records,
        }
    }

    #[test]
    fn failed_seeds_counted_not_averaged() {
        let runs = vec![
            run(0, "adamsls", &[1.0, 0.5], &[]),
            run(1, "adamsls", &[1.0, f64::NAN], &[]),
            run(2, "adamsls", &[2.0, 1.0], &[]),
        ];
        let s = summarize(&runs).unwrap();
        assert_eq!((s.seeds_ok, s.seeds_failed), (2, 1));
        let (m, _) = s.accuracy.unwrap();
        assert!((m - 0.6).abs() < 1e-15);
        let back = read_summary_csv(&render_summary_csv(std::slice::from_ref(&s))).unwrap();
        assert_eq!(back, vec![s]);
    }

    #[test]
    fn table_uses_four_decimals() {
        let row = SummaryRow {
            experiment: "x".into(),
            optimizer: "adam".into(),
            task: "blobs".into(),
            seeds_ok: 5,
            seeds_failed: 0,
            accuracy: Some((0.72504, 0.012349)),
            final_ema_loss: None,
        };
        let t = render_summary_table(&[row]);
        assert!(t.contains("0.7250 ± 0.0123"), "{t}");
        assert!(t.contains("5/0"));
    }

    #[test]
    fn comparison_columns_and_self_comparison() {
        let a = vec![
            run(0, "adam", &[1.0, 0.8], &[]),
            run(1, "adam", &[0.6, 0.4], &[]),
        ];
        let text = render_comparison(&[("a".into(), a.clone()), ("b".into(), a)]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,a_mean,a_stderr,b_mean,b_stderr");
        assert_eq!(lines.len(), 3);
        let cells: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cells[1], cells[3]);
        assert_eq!(cells[2], cells[4]);
        assert_eq!(cells[1].parse::<f64>().unwrap(), 0.8);

        let short = vec![run(0, "adam", &[1.0], &[])];
        let long = vec![run(0, "adam", &[1.0, 2.0], &[])];
        assert!(render_comparison(&[("s".into(), short), ("l".into(), long)]).is_err());
    }

    #[test]
    fn trace_rows_and_mean() {
        let r = run(3, "plasls", &[1.0, 0.9], &[&[0.1, 0.3], &[0.2]]);
        let text = render_trace(&[r]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("3,1,u0,"));
        let mean: f64 = lines[1].split(',').nth(4).unwrap().parse().unwrap();
        assert!((mean - 0.2).abs() < 1e-15);
        assert!(lines[3].starts_with("3,2,u0,"));
        assert!(render_trace(&[run(0, "adam", &[1.0], &[])]).is_err());
    }
}
