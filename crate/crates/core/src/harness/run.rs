use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{ExperimentConfig, TaskSpec};
use super::record::{render_run, RunFile, RunMeta, RunRecord};
use crate::data::{
    load_csv, make_blobs, make_majority_token_task, make_quadratic, BatchStream, CsvSchema,
    Dataset, InputData,
};
use crate::error::{Error, Result};
use crate::models::ModelProblem;
use crate::optim::{
    partition_model, AdamBaseline, AdamSls, Counting, LrSchedule, Optimizer, OptimizerKind,
    Partition, Plasls, SgdSls, StepReport,
};

/// Train and held-out data of one experiment.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub train: Dataset,
    pub eval: Dataset,
}

/// Builds the experiment's data. Generation, subsampling and the split all
/// use the experiment seed, so every run of an experiment sees the same data.
pub fn build_data(cfg: &ExperimentConfig) -> Result<Option<TaskData>> {
    let full = match &cfg.task {
        TaskSpec::Quadratic { .. } => return Ok(None),
        TaskSpec::Blobs {
            n,
            d,
            classes,
            separation,
        } => make_blobs(*n, *d, *classes, *separation, cfg.seed)?,
        TaskSpec::Majority { n, seq, vocab } => {
            make_majority_token_task(*n, *seq, *vocab, cfg.seed)?
        }
        TaskSpec::Csv { path, classes } => load_csv(path, &CsvSchema { classes: *classes })?,
    };
    let full = match cfg.subsample {
        Some(n) => full.subsample(n, cfg.seed)?,
        None => full,
    };
    let (train, eval) = full.split(cfg.eval_fraction, cfg.seed)?;
    if train.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "experiment `{}` has no training samples",
            cfg.name
        )));
    }
    Ok(Some(TaskData { train, eval }))
}

fn input_width(data: &Dataset) -> usize {
    match data.inputs() {
        InputData::Features { dim, .. } => *dim,
        InputData::Tokens { seq_len, .. } => *seq_len,
    }
}

fn build_optimizer(
    cfg: &ExperimentConfig,
    partition: Partition,
    n_train: usize,
    total_steps: usize,
) -> Result<Box<dyn Optimizer>> {
    let batch = cfg.batch_size.min(n_train);
    let mut ls = cfg.line_search.clone();
    ls.batch_size = batch;
    ls.reset_m = cfg.reset_m.unwrap_or(n_train);
    Ok(match cfg.optimizer {
        OptimizerKind::Adam => Box::new(AdamBaseline::new(LrSchedule {
            peak_lr: cfg.peak_lr,
            warmup_fraction: cfg.warmup_fraction,
            total_steps,
        })?),
        OptimizerKind::SgdSls => Box::new(SgdSls::new(ls)?),
        OptimizerKind::AdamSls => Box::new(AdamSls::new(ls)?),
        OptimizerKind::Plasls => {
            let mut p = Plasls::new(partition, ls, cfg.unit_search)?;
            p.merge_threshold = cfg.merge_threshold;
            Box::new(p)
        }
    })
}

struct Logger {
    ema_decay: f64,
    ema: Option<f64>,
    records: Vec<RunRecord>,
    start: Option<Instant>,
}

impl Logger {
    fn push(&mut self, epoch: usize, rep: StepReport, passes: (usize, usize)) -> bool {
        let ema = match self.ema {
            None => rep.loss,
            Some(prev) => self.ema_decay * prev + (1.0 - self.ema_decay) * rep.loss,
        };
        self.ema = Some(ema);
        self.records.push(RunRecord {
            step: self.records.len() + 1,
            epoch,
            loss: rep.loss,
            ema_loss: ema,
            lr: rep.lr,
            backtracks: rep.backtracks,
            exhausted: rep.exhausted,
            forward_passes: passes.0,
            backward_passes: passes.1,
            unit_etas: rep.unit_etas,
            merge: rep.merge.map(|m| m.into),
            merge_warning: rep.merge_warning,
            eval_accuracy: None,
            wall_ms: self.start.map(|s| s.elapsed().as_secs_f64() * 1e3),
        });
        rep.loss.is_finite() && ema.is_finite()
    }
}

/// Trains run `k` (seed `cfg.seed + k`) and returns its log. Nothing is
/// written to disk.
pub fn run_seed(cfg: &ExperimentConfig, k: usize, data: Option<&TaskData>) -> Result<RunFile> {
    let seed = cfg.seed + k as u64;
    let meta = RunMeta {
        experiment: cfg.name.clone(),
        optimizer: cfg.optimizer.name().to_string(),
        task: cfg.task.name().to_string(),
        seed,
    };
    let mut log = Logger {
        ema_decay: cfg.ema_decay,
        ema: None,
        records: Vec::new(),
        start: cfg.wall_clock.then(Instant::now),
    };

    match (&cfg.task, data) {
        (
            TaskSpec::Quadratic {
                spectrum,
                steps_per_epoch,
            },
            _,
        ) => {
            let mut q = make_quadratic(spectrum.len(), spectrum)?;
            let total = cfg.epochs * steps_per_epoch;
            let partition = Partition::whole(1)?;
            let mut opt = build_optimizer(cfg, partition, 1, total)?;
            'train: for epoch in 1..=cfg.epochs {
                for _ in 0..*steps_per_epoch {
                    let mut prob = Counting::new(&mut q);
                    let rep = opt.step(&mut prob)?;
                    let passes = (prob.counts.forward, prob.counts.backward);
                    if !log.push(epoch, rep, passes) {
                        break 'train;
                    }
                }
            }
        }
        (_, Some(data)) => {
            let n_train = data.train.len();
            let mut model = cfg.model.build(
                &cfg.task,
                input_width(&data.train),
                data.train.classes(),
                seed,
            )?;
            let partition = partition_model(&model, &cfg.partition)?;
            let mut stream = BatchStream::new(n_train, cfg.batch_size, seed)?;
            let total = cfg.epochs * stream.batches_per_epoch();
            let mut opt = build_optimizer(cfg, partition, n_train, total)?;
            let eval = if data.eval.is_empty() {
                &data.train
            } else {
                &data.eval
            };
            let eval_batch = eval.full_batch();
            'train: for epoch in 1..=cfg.epochs {
                for idx in stream.next_epoch() {
                    let batch = data.train.batch(&idx);
                    let mut prob = Counting::new(ModelProblem::new(&mut model, &batch));
                    let rep = opt.step(&mut prob)?;
                    let passes = (prob.counts.forward, prob.counts.backward);
                    if !log.push(epoch, rep, passes) {
                        break 'train;
                    }
                }
                let acc = model.accuracy(&eval_batch)?;
                if let Some(last) = log.records.last_mut() {
                    last.eval_accuracy = Some(acc);
                }
            }
        }
        (_, None) => return Err(Error::contract("dataset task run without data")),
    }
    Ok(RunFile {
        meta,
        records: log.records,
    })
}

/// Path of run `seed`'s CSV inside an experiment directory.
pub fn run_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.run_dir().join(format!("seed-{seed}.csv"))
}

/// Runs every seed of an experiment in parallel and writes one CSV per run
/// into `out/<name>/`. Runs come back in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunFile>> {
    super::config::validate(cfg)?;
    let data = build_data(cfg)?;
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    (0..cfg.seeds)
        .into_par_iter()
        .map(|k| {
            let run = run_seed(cfg, k, data.as_ref())?;
            let path = run_path(cfg, run.meta.seed);
            fs::write(&path, render_run(&run.meta, &run.records, cfg.wall_clock))
                .map_err(|e| Error::io(&path, e))?;
            Ok(run)
        })
        .collect()
}
