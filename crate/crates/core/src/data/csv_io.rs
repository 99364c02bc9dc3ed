use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, InputData};
use crate::error::{Error, Result};

/// Numeric feature columns followed by one integer label column.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CsvSchema {
    /// Number of classes; inferred as `max label + 1` when `None`.
    pub classes: Option<usize>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Parses a header row plus data rows. Errors carry 1-based line numbers.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let header_len = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .len();
    if header_len < 2 {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "need at least one feature and a label column, found {header_len} columns"
            ),
        });
    }
    let dim = header_len - 1;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header_len {
            return Err(Error::Parse {
                line,
                msg: format!("expected {header_len} columns, found {}", rec.len()),
            });
        }
        for (col, cell) in rec.iter().take(dim).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column {}: `{cell}` is not a number", col + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("column {}: non-finite value `{cell}`", col + 1),
                });
            }
            values.push(v);
        }
        let cell = rec.get(dim).unwrap_or_default().trim();
        let label: usize = cell.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("label `{cell}` is not a non-negative integer"),
        })?;
        if let Some(k) = schema.classes {
            if label >= k {
                return Err(Error::Parse {
                    line,
                    msg: format!("label {label} out of range for {k} classes"),
                });
            }
        }
        labels.push(label);
    }

    if labels.is_empty() {
        return Err(Error::EmptyDataset("CSV has a header but no rows".into()));
    }
    let classes = schema
        .classes
        .unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(InputData::Features { dim, values }, labels, classes)
}

/// Writes a feature dataset with 17 significant digits per value.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let InputData::Features { dim, values } = data.inputs() else {
        return Err(Error::contract(
            "only feature datasets can be written as CSV",
        ));
    };
    let mut out = String::new();
    let header: Vec<String> = (0..*dim)
        .map(|j| format!("x{j}"))
        .chain(["label".into()])
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, y) in data.labels().iter().enumerate() {
        for v in &values[i * dim..(i + 1) * dim] {
            out.push_str(&format!("{v:.16e},"));
        }
        out.push_str(&format!("{y}\n"));
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
