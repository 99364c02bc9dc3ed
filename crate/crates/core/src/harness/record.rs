//! Per-run CSV files: one comment line with run metadata, a header row and
//! one row per optimizer step.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

const COLUMNS: [&str; 14] = [
    "step",
    "epoch",
    "loss",
    "ema_loss",
    "lr",
    "backtracks",
    "exhausted",
    "forward_passes",
    "backward_passes",
    "units",
    "unit_etas",
    "merge",
    "merge_warning",
    "eval_accuracy",
];
const WALL_CLOCK: &str = "wall_ms";

/// One optimizer step as logged.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    /// 1-based step index.
    pub step: usize,
    /// 1-based epoch the step belongs to.
    pub epoch: usize,
    pub loss: f64,
    pub ema_loss: f64,
    pub lr: f64,
    pub backtracks: usize,
    pub exhausted: bool,
    pub forward_passes: usize,
    pub backward_passes: usize,
    /// `(unit, step size)` after the step; empty for the Adam baseline.
    pub unit_etas: Vec<(String, f64)>,
    /// `a+b` style description of a merge done in this step.
    pub merge: Option<String>,
    pub merge_warning: bool,
    /// Held-out accuracy, logged on the last step of each epoch.
    pub eval_accuracy: Option<f64>,
    pub wall_ms: Option<f64>,
}

/// Identification of a run, stored in the leading comment line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunMeta {
    pub experiment: String,
    pub optimizer: String,
    pub task: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFile {
    pub meta: RunMeta,
    pub records: Vec<RunRecord>,
}

impl RunFile {
    /// A run fails when any logged loss is NaN or infinite.
    pub fn failed(&self) -> bool {
        self.records
            .iter()
            .any(|r| !r.loss.is_finite() || !r.ema_loss.is_finite())
    }

    pub fn final_ema_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.ema_loss)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.eval_accuracy)
    }
}

/// Full round-trip precision.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str, line: usize, col: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("column `{col}`: `{s}` is not a number"),
    })
}

fn parse_usize(s: &str, line: usize, col: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("column `{col}`: `{s}` is not a count"),
    })
}

fn parse_bool(s: &str, line: usize, col: &str) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            line,
            msg: format!("column `{col}`: expected 0 or 1, got `{other}`"),
        }),
    }
}

fn meta_line(meta: &RunMeta) -> String {
    format!(
        "# sls-bench run schema={SCHEMA_VERSION} experiment={} optimizer={} task={} seed={}\n",
        meta.experiment, meta.optimizer, meta.task, meta.seed
    )
}

pub fn render_run(meta: &RunMeta, records: &[RunRecord], wall_clock: bool) -> String {
    let mut out = meta_line(meta);
    out.push_str(&COLUMNS.join(","));
    if wall_clock {
        out.push(',');
        out.push_str(WALL_CLOCK);
    }
    out.push('\n');
    for r in records {
        let etas: Vec<String> = r
            .unit_etas
            .iter()
            .map(|(name, eta)| format!("{name}={}", fmt_f64(*eta)))
            .collect();
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.epoch,
            fmt_f64(r.loss),
            fmt_f64(r.ema_loss),
            fmt_f64(r.lr),
            r.backtracks,
            u8::from(r.exhausted),
            r.forward_passes,
            r.backward_passes,
            r.unit_etas.len(),
            etas.join(";"),
            r.merge.as_deref().unwrap_or(""),
            u8::from(r.merge_warning),
            r.eval_accuracy.map(fmt_f64).unwrap_or_default(),
        );
        if wall_clock {
            let _ = write!(out, ",{}", r.wall_ms.map(fmt_f64).unwrap_or_default());
        }
        out.push('\n');
    }
    out
}

fn parse_meta(line: &str) -> Result<RunMeta> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let rest = line
        .strip_prefix("# sls-bench run ")
        .ok_or_else(|| bad("missing `# sls-bench run` header line".into()))?;
    let mut schema = None;
    let (mut experiment, mut optimizer, mut task, mut seed) = (None, None, None, None);
    for field in rest.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed field `{field}`")))?;
        match k {
            "schema" => schema = Some(v),
            "experiment" => experiment = Some(v.to_string()),
            "optimizer" => optimizer = Some(v.to_string()),
            "task" => task = Some(v.to_string()),
            "seed" => {
                seed = Some(
                    v.parse::<u64>()
                        .map_err(|_| bad(format!("bad seed `{v}`")))?,
                )
            }
            other => return Err(bad(format!("unknown field `{other}`"))),
        }
    }
    if schema != Some(SCHEMA_VERSION.to_string().as_str()) {
        return Err(bad(format!(
            "unsupported schema {:?}, expected {SCHEMA_VERSION}",
            schema.unwrap_or("<none>")
        )));
    }
    let need = |v: Option<String>, k: &str| v.ok_or_else(|| bad(format!("missing `{k}`")));
    Ok(RunMeta {
        experiment: need(experiment, "experiment")?,
        optimizer: need(optimizer, "optimizer")?,
        task: need(task, "task")?,
        seed: seed.ok_or_else(|| bad("missing `seed`".into()))?,
    })
}

fn parse_etas(s: &str, line: usize) -> Result<Vec<(String, f64)>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|pair| {
            let (name, eta) = pair.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("unit step `{pair}` is not name=value"),
            })?;
            Ok((name.to_string(), parse_f64(eta, line, "unit_etas")?))
        })
        .collect()
}

/// Parses a run file produced by [`render_run`].
pub fn read_run<R: Read>(mut reader: R) -> Result<RunFile> {
    let mut text = String::new();
    reader.read_to_string(&mut text).map_err(|e| Error::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    let (first, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    let meta = parse_meta(first.trim_end_matches('\r'))?;

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 2,
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let wall_clock = match header.len() {
        n if n == COLUMNS.len() => false,
        n if n == COLUMNS.len() + 1 && header[n - 1] == WALL_CLOCK => true,
        _ => {
            return Err(Error::Parse {
                line: 2,
                msg: format!("unexpected header `{}`", header.join(",")),
            })
        }
    };
    if header[..COLUMNS.len()] != COLUMNS {
        return Err(Error::Parse {
            line: 2,
            msg: format!("unexpected header `{}`", header.join(",")),
        });
    }

    let mut records = Vec::new();
    for rec in rdr.records() {
        // +1 for the comment line that the csv reader never saw.
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize + 1),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize + 1);
        let f = |i: usize| rec.get(i).unwrap_or_default();
        let opt_f64 = |i: usize| -> Result<Option<f64>> {
            let s = f(i);
            if s.is_empty() {
                Ok(None)
            } else {
                parse_f64(s, line, COLUMNS.get(i).copied().unwrap_or(WALL_CLOCK)).map(Some)
            }
        };
        let unit_etas = parse_etas(f(10), line)?;
        let units = parse_usize(f(9), line, "units")?;
        if units != unit_etas.len() {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "`units` says {units} but {} step sizes follow",
                    unit_etas.len()
                ),
            });
        }
        records.push(RunRecord {
            step: parse_usize(f(0), line, "step")?,
            epoch: parse_usize(f(1), line, "epoch")?,
            loss: parse_f64(f(2), line, "loss")?,
            ema_loss: parse_f64(f(3), line, "ema_loss")?,
            lr: parse_f64(f(4), line, "lr")?,
            backtracks: parse_usize(f(5), line, "backtracks")?,
            exhausted: parse_bool(f(6), line, "exhausted")?,
            forward_passes: parse_usize(f(7), line, "forward_passes")?,
            backward_passes: parse_usize(f(8), line, "backward_passes")?,
            unit_etas,
            merge: Some(f(11)).filter(|s| !s.is_empty()).map(str::to_string),
            merge_warning: parse_bool(f(12), line, "merge_warning")?,
            eval_accuracy: opt_f64(13)?,
            wall_ms: if wall_clock { opt_f64(14)? } else { None },
        });
    }
    Ok(RunFile { meta, records })
}

pub fn load_run(path: impl AsRef<Path>) -> Result<RunFile> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_run(file)
}
