#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sls_core::data::{Batch, InputData};
use sls_core::models::{Activation, EncoderSpec, Model};

/// Central-difference gradient of `model`'s batch loss over every parameter
/// coordinate, compared with the backward pass:
/// `||analytic - numeric|| / max(||analytic||, ||numeric||)`.
pub fn fd_rel_error(model: &mut Model, batch: &Batch, h: f64) -> f64 {
    model.loss_and_grad(batch).unwrap();
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| p.grad().unwrap().to_vec())
        .collect();
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for p in 0..model.params().len() {
        for i in 0..model.params()[p].len() {
            let w = model.params()[p].values()[i];
            model.params_mut()[p].values_mut()[i] = w + h;
            let up = model.loss(batch).unwrap();
            model.params_mut()[p].values_mut()[i] = w - h;
            let down = model.loss(batch).unwrap();
            model.params_mut()[p].values_mut()[i] = w;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[p][i];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-300)
}

/// Adds uniform noise to every parameter so biases and gains are not at
/// their special initial values.
pub fn jitter(model: &mut Model, rng: &mut ChaCha8Rng, scale: f64) {
    for p in model.params_mut() {
        for w in p.values_mut() {
            *w += rng.random_range(-scale..scale);
        }
    }
}

pub fn feature_batch(rng: &mut ChaCha8Rng, rows: usize, dim: usize, classes: usize) -> Batch {
    Batch {
        inputs: InputData::Features {
            dim,
            values: (0..rows * dim)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        },
        labels: (0..rows).map(|_| rng.random_range(0..classes)).collect(),
    }
}

pub fn token_batch(
    rng: &mut ChaCha8Rng,
    rows: usize,
    seq: usize,
    vocab: usize,
    classes: usize,
) -> Batch {
    Batch {
        inputs: InputData::Tokens {
            seq_len: seq,
            ids: (0..rows * seq)
                .map(|_| rng.random_range(0..vocab))
                .collect(),
        },
        labels: (0..rows).map(|_| rng.random_range(0..classes)).collect(),
    }
}

/// Smallest |pre-activation| over every hidden unit and row of an MLP,
/// computed directly from the parameter values (weights are
/// `[fan_in, fan_out]`, row-major).
pub fn mlp_min_preactivation(model: &Model, batch: &Batch) -> f64 {
    let InputData::Features { dim, values } = &batch.inputs else {
        panic!("feature batch expected");
    };
    let params = model.params();
    let hidden = params.len() / 2 - 1;
    let mut min = f64::INFINITY;
    for row in values.chunks(*dim) {
        let mut x = row.to_vec();
        for l in 0..hidden {
            let w = params[2 * l].values();
            let b = params[2 * l + 1].values();
            let out = b.len();
            let mut z = b.to_vec();
            for (i, xi) in x.iter().enumerate() {
                for j in 0..out {
                    z[j] += xi * w[i * out + j];
                }
            }
            min = z.iter().fold(min, |m, v| m.min(v.abs()));
            x = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    min
}

/// Distance from the ReLU kink below which a central difference with step
/// `FD_STEP` may straddle it.
pub const KINK_MARGIN: f64 = 1e-3;

pub const DRAWS: u64 = 20;
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn encoder_spec() -> EncoderSpec {
    EncoderSpec {
        vocab: 12,
        seq_len: 8,
        dim: 16,
        blocks: 2,
        ff_dim: 32,
        classes: 2,
    }
}

/// Worst relative error over the draws for each model family, in the order
/// logreg, MLP depth 3 (ReLU), MLP depth 3 (GELU), encoder.
pub fn gradient_check_all() -> Vec<(&'static str, f64)> {
    let mut worst = vec![
        ("logreg", 0.0f64),
        ("mlp3-relu", 0.0),
        ("mlp3-gelu", 0.0),
        ("encoder", 0.0),
    ];
    for draw in 0..DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
        let mut m = Model::logreg(6, 3, draw).unwrap();
        jitter(&mut m, &mut rng, 0.1);
        let b = feature_batch(&mut rng, 8, 6, 3);
        worst[0].1 = worst[0].1.max(fd_rel_error(&mut m, &b, FD_STEP));

        for (slot, act) in [(1, Activation::Relu), (2, Activation::Gelu)] {
            let mut m = Model::mlp(5, 7, 3, 3, act, draw).unwrap();
            jitter(&mut m, &mut rng, 0.1);
            let mut b = feature_batch(&mut rng, 8, 5, 3);
            if act == Activation::Relu {
                while mlp_min_preactivation(&m, &b) < KINK_MARGIN {
                    b = feature_batch(&mut rng, 8, 5, 3);
                }
            }
            worst[slot].1 = worst[slot].1.max(fd_rel_error(&mut m, &b, FD_STEP));
        }

        let spec = encoder_spec();
        let mut m = Model::encoder(spec.clone(), draw).unwrap();
        jitter(&mut m, &mut rng, 0.1);
        let b = token_batch(&mut rng, 3, spec.seq_len, spec.vocab, spec.classes);
        worst[3].1 = worst[3].1.max(fd_rel_error(&mut m, &b, FD_STEP));
    }
    worst
}
