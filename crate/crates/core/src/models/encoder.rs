//! Single-head post-norm transformer encoder with a position-0 class readout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{normal_matrix, ones, uniform_weight, zeros};
use crate::autodiff::{Parameter, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderSpec {
    pub vocab: usize,
    pub seq_len: usize,
    pub dim: usize,
    pub blocks: usize,
    pub ff_dim: usize,
    pub classes: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            vocab: 64,
            seq_len: 16,
            dim: 32,
            blocks: 4,
            ff_dim: 64,
            classes: 2,
        }
    }
}

/// Parameters per block, in order.
pub(crate) const BLOCK_PARAMS: [&str; 13] = [
    "attn.query",
    "attn.key",
    "attn.value",
    "attn.output",
    "attn.output_bias",
    "ln1.gain",
    "ln1.bias",
    "ffn.w1",
    "ffn.b1",
    "ffn.w2",
    "ffn.b2",
    "ln2.gain",
    "ln2.bias",
];
pub(crate) const BLOCK_PARAM_COUNT: usize = BLOCK_PARAMS.len();
pub(crate) const EMBED_PARAM_COUNT: usize = 2;

/// `softmax(x Wq (x Wk)^T / sqrt(d)) x Wv` for one `[seq x d]` sequence.
pub fn attention(tape: &mut Tape, x: Var, wq: Var, wk: Var, wv: Var) -> Result<Var> {
    let d = tape.shape(x)[1];
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let weights = tape.softmax_rows(scaled)?;
    tape.matmul(weights, v)
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.seq_len == 0 || self.dim == 0 || self.ff_dim == 0 {
            return Err(Error::contract("encoder sizes must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::contract("encoder needs at least two classes"));
        }
        Ok(())
    }

    pub(crate) fn init_params(&self, seed: u64) -> Result<Vec<Parameter>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        let mut params = vec![
            normal_matrix(&mut rng, "embed.token".into(), self.vocab, d, 0.02),
            normal_matrix(&mut rng, "embed.position".into(), self.seq_len, d, 0.02),
        ];
        for b in 0..self.blocks {
            let name = |s: &str| format!("block{b}.{s}");
            params.push(uniform_weight(&mut rng, name("attn.query"), d, d));
            params.push(uniform_weight(&mut rng, name("attn.key"), d, d));
            params.push(uniform_weight(&mut rng, name("attn.value"), d, d));
            params.push(uniform_weight(&mut rng, name("attn.output"), d, d));
            params.push(zeros(name("attn.output_bias"), d));
            params.push(ones(name("ln1.gain"), d));
            params.push(zeros(name("ln1.bias"), d));
            params.push(uniform_weight(&mut rng, name("ffn.w1"), d, self.ff_dim));
            params.push(zeros(name("ffn.b1"), self.ff_dim));
            params.push(uniform_weight(&mut rng, name("ffn.w2"), self.ff_dim, d));
            params.push(zeros(name("ffn.b2"), d));
            params.push(ones(name("ln2.gain"), d));
            params.push(zeros(name("ln2.bias"), d));
        }
        params.push(uniform_weight(
            &mut rng,
            "head.weight".into(),
            d,
            self.classes,
        ));
        params.push(zeros("head.bias".into(), self.classes));
        Ok(params)
    }

    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        seq_len: usize,
        ids: &[usize],
    ) -> Result<Var> {
        if seq_len != self.seq_len {
            return Err(Error::Dimension {
                op: "encoder",
                left: vec![self.seq_len],
                right: vec![seq_len],
            });
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.vocab) {
            return Err(Error::Index(format!(
                "token {bad} out of range for vocabulary of {}",
                self.vocab
            )));
        }
        let rows = ids.len() / seq_len;
        if rows == 0 {
            return Err(Error::contract("encoder needs at least one sequence"));
        }
        let (tok, pos) = (vars[0], vars[1]);
        let head_w = vars[vars.len() - 2];
        let head_b = vars[vars.len() - 1];
        let mut pooled = Vec::with_capacity(rows);
        for r in 0..rows {
            let emb = tape.gather_rows(tok, &ids[r * seq_len..(r + 1) * seq_len])?;
            let mut x = tape.add(emb, pos)?;
            for b in 0..self.blocks {
                let p = &vars[EMBED_PARAM_COUNT + b * BLOCK_PARAM_COUNT..];
                let mixed = attention(tape, x, p[0], p[1], p[2])?;
                let o = tape.matmul(mixed, p[3])?;
                let o = tape.add(o, p[4])?;
                let res = tape.add(x, o)?;
                let h = tape.layernorm(res, p[5], p[6])?;
                let f = tape.matmul(h, p[7])?;
                let f = tape.add(f, p[8])?;
                let f = tape.gelu(f)?;
                let f = tape.matmul(f, p[9])?;
                let f = tape.add(f, p[10])?;
                let res = tape.add(h, f)?;
                x = tape.layernorm(res, p[11], p[12])?;
            }
            pooled.push(tape.select_row(x, 0)?);
        }
        let cls = tape.concat_rows(&pooled)?;
        let logits = tape.matmul(cls, head_w)?;
        tape.add(logits, head_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::InputData;
    use crate::models::Model;
    use rand::{Rng, SeedableRng};

    fn small() -> EncoderSpec {
        EncoderSpec {
            vocab: 10,
            seq_len: 5,
            dim: 6,
            blocks: 2,
            ff_dim: 8,
            classes: 3,
        }
    }

    #[test]
    fn parameter_layout() {
        let m = Model::encoder(small(), 0).unwrap();
        assert_eq!(
            m.params().len(),
            EMBED_PARAM_COUNT + 2 * BLOCK_PARAM_COUNT + 2
        );
        assert_eq!(m.params()[0].name, "embed.token");
        assert_eq!(m.params()[2].name, "block0.attn.query");
        for (i, suffix) in BLOCK_PARAMS.iter().enumerate() {
            assert_eq!(
                m.params()[2 + BLOCK_PARAM_COUNT + i].name,
                format!("block1.{suffix}")
            );
        }
        let mut names: Vec<&str> = m.params().iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), m.params().len());
    }

    #[test]
    fn zeroed_query_key_attends_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (seq, d) = (7, 4);
        let x: Vec<f64> = (0..seq * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let wv: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(vec![seq, d], x.clone()).unwrap();
        let zq = tape.leaf(&Tensor::zeros(vec![d, d]));
        let zk = tape.leaf(&Tensor::zeros(vec![d, d]));
        let v = tape.constant(vec![d, d], wv.clone()).unwrap();
        let out = attention(&mut tape, xv, zq, zk, v).unwrap();

        let values = tape.matmul(xv, v).unwrap();
        let vals = tape.value(values).to_vec();
        let mut mean = vec![0.0; d];
        for r in 0..seq {
            for j in 0..d {
                mean[j] += vals[r * d + j] / seq as f64;
            }
        }
        for r in 0..seq {
            for j in 0..d {
                assert!((tape.value(out)[r * d + j] - mean[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_out_of_vocab_tokens_and_wrong_length() {
        let m = Model::encoder(small(), 0).unwrap();
        let mut tape = Tape::new();
        let bad = InputData::Tokens {
            seq_len: 5,
            ids: vec![0, 1, 2, 3, 10],
        };
        assert!(matches!(m.forward(&mut tape, &bad), Err(Error::Index(_))));
        let short = InputData::Tokens {
            seq_len: 4,
            ids: vec![0, 1, 2, 3],
        };
        assert!(matches!(
            m.forward(&mut tape, &short),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_blocks_reads_embeddings() {
        let spec = EncoderSpec {
            blocks: 0,
            ..small()
        };
        let m = Model::encoder(spec, 4).unwrap();
        assert_eq!(m.params().len(), 4);
        let ids = vec![3, 1, 2, 0, 0];
        let mut tape = Tape::new();
        let out = m
            .forward(&mut tape, &InputData::Tokens { seq_len: 5, ids })
            .unwrap();
        let tok = m.params()[0].values();
        let pos = m.params()[1].values();
        let w = m.params()[2].values();
        let d = 6;
        for c in 0..3 {
            let expected: f64 = (0..d)
                .map(|j| (tok[3 * d + j] + pos[j]) * w[j * 3 + c])
                .sum();
            assert!((tape.value(out)[c] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn rows_are_independent_of_batch_order() {
        let m = Model::encoder(small(), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids: Vec<usize> = (0..4 * 5).map(|_| rng.random_range(0..10)).collect();
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<usize> = perm
            .iter()
            .flat_map(|&r| ids[r * 5..(r + 1) * 5].to_vec())
            .collect();
        let (mut t1, mut t2) = (Tape::new(), Tape::new());
        let a = m
            .forward(&mut t1, &InputData::Tokens { seq_len: 5, ids })
            .unwrap();
        let b = m
            .forward(
                &mut t2,
                &InputData::Tokens {
                    seq_len: 5,
                    ids: permuted,
                },
            )
            .unwrap();
        for (k, &r) in perm.iter().enumerate() {
            assert_eq!(
                &t2.value(b)[k * 3..(k + 1) * 3],
                &t1.value(a)[r * 3..(r + 1) * 3]
            );
        }
    }
}
