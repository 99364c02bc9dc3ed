//! Datasets, seeded synthetic tasks, mini-batching and CSV ingestion.

mod csv_io;
mod quadratic;
mod synthetic;

pub use csv_io::{load_csv, read_csv, write_csv, CsvSchema};
pub use quadratic::{make_quadratic, Quadratic};
pub use synthetic::{
    majority_label, make_blobs, make_majority_token_task, CLS_TOKEN, TOKEN_A, TOKEN_B,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major model inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum InputData {
    Features { dim: usize, values: Vec<f64> },
    Tokens { seq_len: usize, ids: Vec<usize> },
}

impl InputData {
    pub fn rows(&self) -> usize {
        match self {
            InputData::Features { dim, values } => {
                if *dim == 0 {
                    0
                } else {
                    values.len() / dim
                }
            }
            InputData::Tokens { seq_len, ids } => {
                if *seq_len == 0 {
                    0
                } else {
                    ids.len() / seq_len
                }
            }
        }
    }

    /// Copies rows `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> InputData {
        match self {
            InputData::Features { dim, values } => InputData::Features {
                dim: *dim,
                values: idx
                    .iter()
                    .flat_map(|&i| values[i * dim..(i + 1) * dim].iter().copied())
                    .collect(),
            },
            InputData::Tokens { seq_len, ids } => InputData::Tokens {
                seq_len: *seq_len,
                ids: idx
                    .iter()
                    .flat_map(|&i| ids[i * seq_len..(i + 1) * seq_len].iter().copied())
                    .collect(),
            },
        }
    }
}

/// Inputs and labels for one mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: InputData,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Labeled samples. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: InputData,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: InputData, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let shape_ok = match &inputs {
            InputData::Features { dim, values } => *dim > 0 && values.len() % dim == 0,
            InputData::Tokens { seq_len, ids } => *seq_len > 0 && ids.len() % seq_len == 0,
        };
        if !shape_ok {
            return Err(Error::contract(
                "input buffer is not a whole number of rows",
            ));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::Dimension {
                op: "dataset",
                left: vec![inputs.rows()],
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> &InputData {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn full_batch(&self) -> Batch {
        Batch {
            inputs: self.inputs.clone(),
            labels: self.labels.clone(),
        }
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// `n` samples drawn without replacement under `seed`.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::contract(format!(
                "cannot draw {n} samples from {}",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n);
        Ok(self.subset(&idx))
    }

    /// Seeded `(train, held_out)` split with `round(n * eval_fraction)`
    /// held-out samples.
    pub fn split(&self, eval_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(Error::contract(format!(
                "eval fraction must lie in [0,1), got {eval_fraction}"
            )));
        }
        let n_eval = (self.len() as f64 * eval_fraction).round() as usize;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (eval, train) = idx.split_at(n_eval);
        Ok((self.subset(train), self.subset(eval)))
    }
}

/// Seeded per-epoch permutations of `0..n`, cut into batches of `batch_size`
/// (the last one may be short).
#[derive(Clone, Debug)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyDataset("no samples to batch".into()));
        }
        if batch_size == 0 {
            return Err(Error::contract("batch size must be at least 1"));
        }
        Ok(Self {
            n,
            batch_size,
            seed,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    /// Batches of the next epoch; advances the epoch counter.
    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut rng);
        self.epoch += 1;
        order.chunks(self.batch_size).map(|c| c.to_vec()).collect()
    }
}
