//! Small differentiable classifiers with named, partitionable parameters.
//!
//! Initialization: affine weights are drawn from `U(-1/sqrt(fan_in),
//! 1/sqrt(fan_in))`, biases start at zero, embeddings from `N(0, 0.02^2)`,
//! layer-norm gains at one.

mod encoder;
mod units;

pub use encoder::{attention, EncoderSpec};
pub use units::{split_blocks, PartitionScheme};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Parameter, Tape, Tensor, Var};
use crate::data::{Batch, InputData};
use crate::error::{Error, Result};
use crate::optim::Problem;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    LogReg {
        inputs: usize,
        classes: usize,
    },
    /// `depth` affine layers; the last one is the classification head.
    Mlp {
        inputs: usize,
        width: usize,
        depth: usize,
        classes: usize,
        activation: Activation,
    },
    Encoder(EncoderSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Architecture,
    params: Vec<Parameter>,
}

pub(crate) fn uniform_weight(
    rng: &mut ChaCha8Rng,
    name: String,
    fan_in: usize,
    fan_out: usize,
) -> Parameter {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let values = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Parameter::new(
        name,
        Tensor::new(vec![fan_in, fan_out], values).expect("shape"),
    )
}

pub(crate) fn zeros(name: String, n: usize) -> Parameter {
    Parameter::new(name, Tensor::zeros(vec![n]))
}

pub(crate) fn ones(name: String, n: usize) -> Parameter {
    Parameter::new(name, Tensor::from_vec(vec![1.0; n]))
}

pub(crate) fn normal_matrix(
    rng: &mut ChaCha8Rng,
    name: String,
    rows: usize,
    cols: usize,
    std: f64,
) -> Parameter {
    let dist = Normal::new(0.0, std).expect("std");
    let values = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Parameter::new(name, Tensor::new(vec![rows, cols], values).expect("shape"))
}

impl Model {
    pub fn logreg(inputs: usize, classes: usize, seed: u64) -> Result<Self> {
        if inputs == 0 || classes < 2 {
            return Err(Error::contract(
                "logistic regression needs inputs >= 1 and classes >= 2",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = vec![
            uniform_weight(&mut rng, "linear.weight".into(), inputs, classes),
            zeros("linear.bias".into(), classes),
        ];
        Ok(Self {
            arch: Architecture::LogReg { inputs, classes },
            params,
        })
    }

    pub fn mlp(
        inputs: usize,
        width: usize,
        depth: usize,
        classes: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::contract("MLP depth must be at least 1"));
        }
        if inputs == 0 || classes < 2 || (depth > 1 && width == 0) {
            return Err(Error::contract(
                "MLP needs inputs, width >= 1 and classes >= 2",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(2 * depth);
        let mut fan_in = inputs;
        for i in 0..depth - 1 {
            params.push(uniform_weight(
                &mut rng,
                format!("layer{i}.weight"),
                fan_in,
                width,
            ));
            params.push(zeros(format!("layer{i}.bias"), width));
            fan_in = width;
        }
        params.push(uniform_weight(
            &mut rng,
            "head.weight".into(),
            fan_in,
            classes,
        ));
        params.push(zeros("head.bias".into(), classes));
        Ok(Self {
            arch: Architecture::Mlp {
                inputs,
                width,
                depth,
                classes,
                activation,
            },
            params,
        })
    }

    pub fn encoder(spec: EncoderSpec, seed: u64) -> Result<Self> {
        let params = spec.init_params(seed)?;
        Ok(Self {
            arch: Architecture::Encoder(spec),
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn classes(&self) -> usize {
        match &self.arch {
            Architecture::LogReg { classes, .. } | Architecture::Mlp { classes, .. } => *classes,
            Architecture::Encoder(spec) => spec.classes,
        }
    }

    /// Records the forward pass for `inputs` and returns `[rows x classes]`
    /// logits.
    pub fn forward(&self, tape: &mut Tape, inputs: &InputData) -> Result<Var> {
        let vars: Vec<Var> = (0..self.params.len())
            .map(|i| tape.param(&self.params, i))
            .collect();
        match (&self.arch, inputs) {
            (Architecture::LogReg { .. }, InputData::Features { dim, values }) => {
                let x = features(tape, *dim, values, self.params[0].tensor.shape()[0])?;
                affine(tape, x, vars[0], vars[1])
            }
            (
                Architecture::Mlp {
                    depth, activation, ..
                },
                InputData::Features { dim, values },
            ) => {
                let mut h = features(tape, *dim, values, self.params[0].tensor.shape()[0])?;
                for layer in 0..*depth {
                    h = affine(tape, h, vars[2 * layer], vars[2 * layer + 1])?;
                    if layer + 1 < *depth {
                        h = match activation {
                            Activation::Relu => tape.relu(h)?,
                            Activation::Gelu => tape.gelu(h)?,
                        };
                    }
                }
                Ok(h)
            }
            (Architecture::Encoder(spec), InputData::Tokens { seq_len, ids }) => {
                spec.forward(tape, &vars, *seq_len, ids)
            }
            _ => Err(Error::contract(
                "input kind does not match the model architecture",
            )),
        }
    }

    /// Mean cross-entropy on `batch`, forward only.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, &batch.inputs)?;
        let loss = tape.softmax_cross_entropy(logits, &batch.labels)?;
        tape.scalar(loss)
    }

    /// Mean cross-entropy on `batch`; gradients land in every parameter.
    pub fn loss_and_grad(&mut self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, &batch.inputs)?;
        let loss = tape.softmax_cross_entropy(logits, &batch.labels)?;
        let value = tape.scalar(loss)?;
        tape.backward(loss)?.write_into(&mut self.params)?;
        Ok(value)
    }

    pub fn predict(&self, inputs: &InputData) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, inputs)?;
        let classes = tape.shape(logits)[1];
        Ok(tape
            .value(logits)
            .chunks(classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &v)| {
                        if v > best.1 {
                            (j, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }

    /// Fraction of correctly classified rows; NaN for an empty batch.
    pub fn accuracy(&self, batch: &Batch) -> Result<f64> {
        if batch.is_empty() {
            return Ok(f64::NAN);
        }
        let pred = self.predict(&batch.inputs)?;
        let hits = pred
            .iter()
            .zip(&batch.labels)
            .filter(|(p, y)| p == y)
            .count();
        Ok(hits as f64 / batch.len() as f64)
    }

    /// Unit label of every parameter under `scheme`, in parameter order.
    pub fn unit_labels(&self, scheme: &PartitionScheme) -> Result<Vec<String>> {
        units::labels(self, scheme)
    }
}

fn features(tape: &mut Tape, dim: usize, values: &[f64], expected: usize) -> Result<Var> {
    if dim != expected {
        return Err(Error::Dimension {
            op: "features",
            left: vec![expected],
            right: vec![dim],
        });
    }
    tape.constant(vec![values.len() / dim.max(1), dim], values.to_vec())
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

/// A model bound to the mini-batch it is currently trained on.
pub struct ModelProblem<'a> {
    pub model: &'a mut Model,
    pub batch: &'a Batch,
}

impl<'a> ModelProblem<'a> {
    pub fn new(model: &'a mut Model, batch: &'a Batch) -> Self {
        Self { model, batch }
    }
}

impl Problem for ModelProblem<'_> {
    fn params(&self) -> &[Parameter] {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut [Parameter] {
        self.model.params_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        self.model.loss(self.batch)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        self.model.loss_and_grad(self.batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(dim: usize, values: Vec<f64>) -> InputData {
        InputData::Features { dim, values }
    }

    #[test]
    fn zero_logreg_gives_log_classes() {
        for classes in [2, 3, 7] {
            let mut m = Model::logreg(4, classes, 0).unwrap();
            for p in m.params_mut() {
                p.values_mut().fill(0.0);
            }
            let batch = Batch {
                inputs: feat(4, vec![0.3, -1.0, 2.0, 5.0, 1.0, 1.0, 1.0, 1.0]),
                labels: vec![0, 1],
            };
            assert!((m.loss(&batch).unwrap() - (classes as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn logreg_hand_example() {
        let mut m = Model::logreg(1, 2, 0).unwrap();
        m.params_mut()[0].values_mut().copy_from_slice(&[1.0, -1.0]);
        m.params_mut()[1].values_mut().fill(0.0);
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &feat(1, vec![3.0])).unwrap();
        assert_eq!(tape.value(out), &[3.0, -3.0]);
    }

    #[test]
    fn logreg_rejects_wrong_width() {
        let m = Model::logreg(3, 2, 0).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(
            m.forward(&mut tape, &feat(2, vec![1.0, 2.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn depth_one_mlp_is_logreg() {
        let mut mlp = Model::mlp(3, 8, 1, 2, Activation::Relu, 5).unwrap();
        let lr = Model::logreg(3, 2, 5).unwrap();
        for (a, b) in mlp.params_mut().iter_mut().zip(lr.params()) {
            a.values_mut().copy_from_slice(b.values());
        }
        let x = feat(3, vec![0.5, -1.0, 2.0, 1.0, 1.0, -3.0]);
        let (mut t1, mut t2) = (Tape::new(), Tape::new());
        let o1 = mlp.forward(&mut t1, &x).unwrap();
        let o2 = lr.forward(&mut t2, &x).unwrap();
        assert_eq!(t1.value(o1), t2.value(o2));
    }

    #[test]
    fn identity_relu_layers_are_transparent_on_positive_inputs() {
        let d = 3;
        let mut m = Model::mlp(d, d, 3, 2, Activation::Relu, 1).unwrap();
        for layer in 0..2 {
            let w = m.params_mut()[2 * layer].values_mut();
            w.fill(0.0);
            for i in 0..d {
                w[i * d + i] = 1.0;
            }
            m.params_mut()[2 * layer + 1].values_mut().fill(0.0);
        }
        m.params_mut()[5].values_mut().fill(0.0);
        let head = m.params()[4].values().to_vec();
        let x = vec![0.5, 2.0, 1.25];
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &feat(d, x.clone())).unwrap();
        for c in 0..2 {
            let expected: f64 = (0..d).map(|i| x[i] * head[i * 2 + c]).sum();
            assert!((tape.value(out)[c] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn same_seed_same_model() {
        let a = Model::mlp(4, 5, 3, 3, Activation::Gelu, 99).unwrap();
        let b = Model::mlp(4, 5, 3, 3, Activation::Gelu, 99).unwrap();
        assert_eq!(a, b);
        let c = Model::mlp(4, 5, 3, 3, Activation::Gelu, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let mut m = Model::logreg(1, 2, 0).unwrap();
        m.params_mut()[0].values_mut().copy_from_slice(&[1.0, -1.0]);
        m.params_mut()[1].values_mut().fill(0.0);
        let batch = Batch {
            inputs: feat(1, vec![1.0, -1.0, 2.0, 3.0]),
            labels: vec![0, 1, 1, 0],
        };
        assert_eq!(m.accuracy(&batch).unwrap(), 0.75);
    }
}
