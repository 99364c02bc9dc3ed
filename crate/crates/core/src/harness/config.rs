//! Experiment files: TOML with top-level keys as shared defaults and one table
//! per experiment.
//!
//! ```toml
//! epochs = 5
//! seeds = 5
//! task = "blobs"
//!
//! [adam]
//! optimizer = "adam"
//!
//! [plasls]
//! optimizer = "plasls"
//! model = "mlp"
//! partition = "per_layer:2"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::line_search::LineSearchConfig;
use crate::models::{Activation, EncoderSpec, Model, PartitionScheme};
use crate::optim::{partition_model, LrSchedule, OptimizerKind, UnitSearch, MERGE_THRESHOLD};

#[derive(Clone, Debug, PartialEq)]
pub enum TaskSpec {
    /// Deterministic quadratic; every step sees the whole objective.
    Quadratic {
        spectrum: Vec<f64>,
        steps_per_epoch: usize,
    },
    Blobs {
        n: usize,
        d: usize,
        classes: usize,
        separation: f64,
    },
    Majority {
        n: usize,
        seq: usize,
        vocab: usize,
    },
    Csv {
        path: PathBuf,
        classes: Option<usize>,
    },
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Quadratic { .. } => "quadratic",
            TaskSpec::Blobs { .. } => "blobs",
            TaskSpec::Majority { .. } => "majority",
            TaskSpec::Csv { .. } => "csv",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    /// The quadratic task has no model.
    None,
    LogReg,
    Mlp {
        width: usize,
        depth: usize,
        activation: Activation,
    },
    Encoder {
        dim: usize,
        blocks: usize,
        ff: usize,
    },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::None => "none",
            ModelSpec::LogReg => "logreg",
            ModelSpec::Mlp { .. } => "mlp",
            ModelSpec::Encoder { .. } => "encoder",
        }
    }

    /// Builds the model for `inputs` features (or `vocab`/`seq_len` tokens).
    pub fn build(
        &self,
        task: &TaskSpec,
        inputs: usize,
        classes: usize,
        seed: u64,
    ) -> Result<Model> {
        match (self, task) {
            (ModelSpec::LogReg, _) => Model::logreg(inputs, classes, seed),
            (
                ModelSpec::Mlp {
                    width,
                    depth,
                    activation,
                },
                _,
            ) => Model::mlp(inputs, *width, *depth, classes, *activation, seed),
            (ModelSpec::Encoder { dim, blocks, ff }, TaskSpec::Majority { seq, vocab, .. }) => {
                Model::encoder(
                    EncoderSpec {
                        vocab: *vocab,
                        seq_len: *seq,
                        dim: *dim,
                        blocks: *blocks,
                        ff_dim: *ff,
                        classes,
                    },
                    seed,
                )
            }
            _ => Err(Error::contract(format!(
                "model `{}` cannot be built for task `{}`",
                self.name(),
                task.name()
            ))),
        }
    }
}

/// One fully resolved and validated experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: TaskSpec,
    /// Draw this many samples before splitting.
    pub subsample: Option<usize>,
    pub model: ModelSpec,
    pub optimizer: OptimizerKind,
    pub partition: PartitionScheme,
    pub unit_search: UnitSearch,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: usize,
    /// Data seed; run `k` initializes and shuffles with `seed + k`.
    pub seed: u64,
    /// Search constants; `batch_size` and `reset_m` are filled per run.
    pub line_search: LineSearchConfig,
    /// Reset constant `m`; the training-set size when `None`.
    pub reset_m: Option<usize>,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub merge_threshold: f64,
    pub ema_decay: f64,
    pub eval_fraction: f64,
    /// Adds a wall-clock column, which makes reruns differ.
    pub wall_clock: bool,
    /// Root output directory; runs go to `out/<name>/`.
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.name)
    }

    /// Optimizer steps in one epoch for a training set of `n_train` samples.
    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        match &self.task {
            TaskSpec::Quadratic {
                steps_per_epoch, ..
            } => *steps_per_epoch,
            _ => n_train.div_ceil(self.batch_size),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLs {
    c: Option<f64>,
    delta: Option<f64>,
    eta_max: Option<f64>,
    max_backtracks: Option<usize>,
    m: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLr {
    peak: Option<f64>,
    warmup: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    task: Option<String>,
    n: Option<usize>,
    d: Option<usize>,
    classes: Option<usize>,
    separation: Option<f64>,
    seq: Option<usize>,
    vocab: Option<usize>,
    spectrum: Option<Vec<f64>>,
    steps_per_epoch: Option<usize>,
    csv_path: Option<String>,
    subsample: Option<usize>,
    model: Option<String>,
    width: Option<usize>,
    depth: Option<usize>,
    activation: Option<String>,
    dim: Option<usize>,
    blocks: Option<usize>,
    ff: Option<usize>,
    optimizer: Option<String>,
    partition: Option<String>,
    unit_search: Option<String>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    seeds: Option<usize>,
    seed: Option<u64>,
    eval_fraction: Option<f64>,
    ema_decay: Option<f64>,
    merge_threshold: Option<f64>,
    wall_clock: Option<bool>,
    out: Option<String>,
    ls: Option<RawLs>,
    lr: Option<RawLr>,
}

/// Nested tables that hold settings rather than experiments.
const SETTING_TABLES: [&str; 2] = ["ls", "lr"];

fn cfg_err(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("experiment `{name}`: {msg}"))
}

/// Parses an experiment file. Relative paths (`csv_path`, `out`) are taken
/// relative to `base_dir`. A file without tables is a single experiment
/// called `default_name`.
pub fn parse_config(
    text: &str,
    default_name: &str,
    base_dir: &Path,
) -> Result<Vec<ExperimentConfig>> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| {
        let line = e
            .span()
            .map(|s| {
                text.as_bytes()[..s.start.min(text.len())]
                    .iter()
                    .filter(|&&b| b == b'\n')
                    .count()
                    + 1
            })
            .unwrap_or(0);
        Error::Parse {
            line,
            msg: e.message().to_string(),
        }
    })?;

    let mut globals = Table::new();
    let mut sections: Vec<(String, Table)> = Vec::new();
    for (key, value) in doc {
        match value {
            Value::Table(t) if !SETTING_TABLES.contains(&key.as_str()) => sections.push((key, t)),
            other => {
                globals.insert(key, other);
            }
        }
    }
    if sections.is_empty() {
        sections.push((default_name.to_string(), Table::new()));
    }

    let mut out = Vec::with_capacity(sections.len());
    for (name, section) in sections {
        if let Some((k, _)) = section
            .iter()
            .find(|(k, v)| v.is_table() && !SETTING_TABLES.contains(&k.as_str()))
        {
            return Err(cfg_err(&name, format!("nested table `{k}` is not allowed")));
        }
        let mut merged = globals.clone();
        for (k, v) in section {
            match (merged.get_mut(&k), v) {
                (Some(Value::Table(base)), Value::Table(over)) => base.extend(over),
                (_, v) => {
                    merged.insert(k, v);
                }
            }
        }
        let raw: RawExperiment = Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| cfg_err(&name, e.message()))?;
        out.push(resolve(&name, raw, base_dir)?);
    }
    let mut names: Vec<&str> = out.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Config(format!(
            "experiment `{}` is defined twice",
            w[0]
        )));
    }
    Ok(out)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Vec<ExperimentConfig>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("experiment");
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, stem, base)
}

fn resolve(name: &str, raw: RawExperiment, base_dir: &Path) -> Result<ExperimentConfig> {
    let err = |msg: String| cfg_err(name, msg);
    if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
        return Err(err("names must be plain directory names".into()));
    }
    let optimizer: OptimizerKind = raw
        .optimizer
        .as_deref()
        .ok_or_else(|| err("missing `optimizer`".into()))?
        .parse()
        .map_err(|e: Error| err(e.to_string()))?;

    let task_name = raw
        .task
        .as_deref()
        .ok_or_else(|| err("missing `task`".into()))?;
    let only_for = |keys: &[(&str, bool)], task: &str| -> Result<()> {
        match keys.iter().find(|(_, set)| *set) {
            Some((k, _)) => Err(err(format!("`{k}` does not apply to task `{task}`"))),
            None => Ok(()),
        }
    };
    let task = match task_name {
        "quadratic" => {
            only_for(
                &[
                    ("n", raw.n.is_some()),
                    ("d", raw.d.is_some()),
                    ("classes", raw.classes.is_some()),
                    ("csv_path", raw.csv_path.is_some()),
                    ("subsample", raw.subsample.is_some()),
                ],
                task_name,
            )?;
            TaskSpec::Quadratic {
                spectrum: raw.spectrum.clone().unwrap_or_else(|| vec![1.0, 100.0]),
                steps_per_epoch: raw.steps_per_epoch.unwrap_or(10),
            }
        }
        "blobs" => TaskSpec::Blobs {
            n: raw.n.unwrap_or(500),
            d: raw.d.unwrap_or(20),
            classes: raw.classes.unwrap_or(2),
            separation: raw.separation.unwrap_or(4.0),
        },
        "majority" => TaskSpec::Majority {
            n: raw.n.unwrap_or(500),
            seq: raw.seq.unwrap_or(8),
            vocab: raw.vocab.unwrap_or(16),
        },
        "csv" => {
            let p = raw
                .csv_path
                .as_deref()
                .ok_or_else(|| err("task `csv` needs `csv_path`".into()))?;
            TaskSpec::Csv {
                path: base_dir.join(p),
                classes: raw.classes,
            }
        }
        other => {
            return Err(err(format!(
                "unknown task `{other}` (expected quadratic, blobs, majority or csv)"
            )))
        }
    };
    if !matches!(task, TaskSpec::Quadratic { .. }) {
        only_for(
            &[
                ("spectrum", raw.spectrum.is_some()),
                ("steps_per_epoch", raw.steps_per_epoch.is_some()),
            ],
            task_name,
        )?;
    }
    if !matches!(task, TaskSpec::Majority { .. }) {
        only_for(
            &[("seq", raw.seq.is_some()), ("vocab", raw.vocab.is_some())],
            task_name,
        )?;
    }
    if !matches!(task, TaskSpec::Blobs { .. }) {
        only_for(
            &[
                ("separation", raw.separation.is_some()),
                ("d", raw.d.is_some()),
            ],
            task_name,
        )?;
    }

    let model = match (&task, raw.model.as_deref()) {
        (TaskSpec::Quadratic { .. }, None) => ModelSpec::None,
        (TaskSpec::Quadratic { .. }, Some(m)) => {
            return Err(err(format!("task `quadratic` takes no model, got `{m}`")))
        }
        (TaskSpec::Majority { .. }, None | Some("encoder")) => ModelSpec::Encoder {
            dim: raw.dim.unwrap_or(16),
            blocks: raw.blocks.unwrap_or(2),
            ff: raw.ff.unwrap_or(32),
        },
        (TaskSpec::Majority { .. }, Some(m)) => {
            return Err(err(format!("task `majority` needs the encoder, got `{m}`")))
        }
        (_, None | Some("logreg")) => ModelSpec::LogReg,
        (_, Some("mlp")) => ModelSpec::Mlp {
            width: raw.width.unwrap_or(32),
            depth: raw.depth.unwrap_or(2),
            activation: match raw.activation.as_deref().unwrap_or("relu") {
                "relu" => Activation::Relu,
                "gelu" => Activation::Gelu,
                other => return Err(err(format!("unknown activation `{other}`"))),
            },
        },
        (_, Some("encoder")) => {
            return Err(err(format!(
                "the encoder needs token inputs, task `{task_name}` has features"
            )))
        }
        (_, Some(m)) => {
            return Err(err(format!(
                "unknown model `{m}` (expected logreg, mlp or encoder)"
            )))
        }
    };
    let model_keys = [
        ("width", raw.width.is_some(), "mlp"),
        ("depth", raw.depth.is_some(), "mlp"),
        ("activation", raw.activation.is_some(), "mlp"),
        ("dim", raw.dim.is_some(), "encoder"),
        ("blocks", raw.blocks.is_some(), "encoder"),
        ("ff", raw.ff.is_some(), "encoder"),
    ];
    if let Some((k, _, owner)) = model_keys
        .iter()
        .find(|(_, set, owner)| *set && *owner != model.name())
    {
        return Err(err(format!("`{k}` only applies to model `{owner}`")));
    }

    let partition: PartitionScheme = match raw.partition.as_deref() {
        None => PartitionScheme::Whole,
        Some(_) if optimizer != OptimizerKind::Plasls => {
            return Err(err(format!(
                "`partition` only applies to plasls, not {optimizer}"
            )))
        }
        Some(p) => p.parse().map_err(|e: Error| err(e.to_string()))?,
    };
    let unit_search: UnitSearch = match raw.unit_search.as_deref() {
        None => UnitSearch::default(),
        Some(_) if optimizer != OptimizerKind::Plasls => {
            return Err(err(format!(
                "`unit_search` only applies to plasls, not {optimizer}"
            )))
        }
        Some(u) => u.parse().map_err(|e: Error| err(e.to_string()))?,
    };

    if optimizer.uses_line_search() && raw.lr.is_some() {
        return Err(err(format!(
            "{optimizer} picks its own step sizes; `lr.*` settings are only for adam"
        )));
    }
    if !optimizer.uses_line_search() && raw.ls.is_some() {
        return Err(err(
            "adam does not line-search; `ls.*` settings are not allowed".into(),
        ));
    }
    if optimizer != OptimizerKind::Plasls && raw.merge_threshold.is_some() {
        return Err(err("`merge_threshold` only applies to plasls".into()));
    }

    let ls_raw = raw.ls.unwrap_or_default();
    let defaults = LineSearchConfig::default();
    let line_search = LineSearchConfig {
        c: ls_raw.c.unwrap_or(defaults.c),
        delta: ls_raw.delta.unwrap_or(defaults.delta),
        eta_max: ls_raw.eta_max.unwrap_or(defaults.eta_max),
        max_backtracks: ls_raw.max_backtracks.unwrap_or(defaults.max_backtracks),
        ..defaults
    };
    line_search.validate().map_err(|e| err(e.to_string()))?;
    let lr_raw = raw.lr.unwrap_or_default();

    let cfg = ExperimentConfig {
        name: name.to_string(),
        task,
        subsample: raw.subsample,
        model,
        optimizer,
        partition,
        unit_search,
        epochs: raw.epochs.unwrap_or(5),
        batch_size: raw.batch_size.unwrap_or(32),
        seeds: raw.seeds.unwrap_or(5),
        seed: raw.seed.unwrap_or(0),
        line_search,
        reset_m: ls_raw.m,
        peak_lr: lr_raw.peak.unwrap_or(LrSchedule::DEFAULT_PEAK),
        warmup_fraction: lr_raw.warmup.unwrap_or(LrSchedule::DEFAULT_WARMUP),
        merge_threshold: raw.merge_threshold.unwrap_or(MERGE_THRESHOLD),
        ema_decay: raw.ema_decay.unwrap_or(0.99),
        eval_fraction: raw.eval_fraction.unwrap_or(0.2),
        wall_clock: raw.wall_clock.unwrap_or(false),
        out: base_dir.join(raw.out.as_deref().unwrap_or("runs")),
    };
    validate(&cfg).map_err(|e| err(e.to_string()))?;
    Ok(cfg)
}

/// Checks ranges and that the partition fits the model.
pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    let positive = [
        ("epochs", cfg.epochs),
        ("batch_size", cfg.batch_size),
        ("seeds", cfg.seeds),
    ];
    if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
        return Err(Error::contract(format!("`{k}` must be at least 1")));
    }
    if !(0.0..1.0).contains(&cfg.ema_decay) {
        return Err(Error::contract(format!(
            "`ema_decay` must lie in [0,1), got {}",
            cfg.ema_decay
        )));
    }
    if !(0.0..1.0).contains(&cfg.eval_fraction) {
        return Err(Error::contract(format!(
            "`eval_fraction` must lie in [0,1), got {}",
            cfg.eval_fraction
        )));
    }
    if !(cfg.merge_threshold >= 0.0) {
        return Err(Error::contract("`merge_threshold` must be non-negative"));
    }
    if cfg.reset_m == Some(0) {
        return Err(Error::contract("`ls.m` must be at least 1"));
    }
    LrSchedule {
        peak_lr: cfg.peak_lr,
        warmup_fraction: cfg.warmup_fraction,
        total_steps: 1,
    }
    .validate()?;

    match &cfg.task {
        TaskSpec::Quadratic {
            spectrum,
            steps_per_epoch,
        } => {
            if *steps_per_epoch == 0 {
                return Err(Error::contract("`steps_per_epoch` must be at least 1"));
            }
            crate::data::make_quadratic(spectrum.len(), spectrum)?;
            if cfg.partition != PartitionScheme::Whole
                && cfg.partition != PartitionScheme::PerLayer(1)
            {
                return Err(Error::contract(
                    "the quadratic task has a single parameter block",
                ));
            }
        }
        TaskSpec::Blobs {
            n,
            d,
            classes,
            separation,
        } => {
            if *n < *classes || *d == 0 || *classes < 2 || !(separation.is_finite()) {
                return Err(Error::contract(
                    "blobs need n >= classes >= 2, d >= 1 and finite separation",
                ));
            }
        }
        TaskSpec::Majority { n, seq, vocab } => {
            if *n == 0 || *seq < 2 || *vocab < 4 {
                return Err(Error::contract(
                    "majority task needs n >= 1, seq >= 2 and vocab >= 4",
                ));
            }
        }
        TaskSpec::Csv { .. } => {}
    }

    // Partition validity depends only on layer structure, so a toy-sized
    // model of the same shape is enough.
    let probe = match (&cfg.model, &cfg.task) {
        (ModelSpec::None, _) => None,
        (ModelSpec::Encoder { dim, blocks, ff }, _) => Some(Model::encoder(
            EncoderSpec {
                vocab: 4,
                seq_len: 2,
                dim: *dim,
                blocks: *blocks,
                ff_dim: *ff,
                classes: 2,
            },
            0,
        )?),
        (m, t) => Some(m.build(t, 1, 2, 0)?),
    };
    if let Some(model) = probe {
        partition_model(&model, &cfg.partition)?;
    }
    Ok(())
}
