use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, InputData};
use crate::error::{Error, Result};

/// Reserved classification token at position 0 of every sequence.
pub const CLS_TOKEN: usize = 0;
/// Content token whose majority yields label 0.
pub const TOKEN_A: usize = 1;
/// Content token whose majority yields label 1.
pub const TOKEN_B: usize = 2;

/// Balanced Gaussian clusters with unit noise.
///
/// Class `c < 2d` is centered at `±(separation / sqrt 2) e_{c mod d}`, so any
/// two of those centers are at least `separation` apart. Further classes get
/// random centers of norm about `separation`. Sample `i` has label
/// `i % classes`.
pub fn make_blobs(
    n: usize,
    d: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || d == 0 {
        return Err(Error::contract(
            "blobs need at least one class and one feature",
        ));
    }
    if n < classes {
        return Err(Error::contract(format!(
            "need n >= classes, got n={n} classes={classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = separation / std::f64::consts::SQRT_2;
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            if c < 2 * d {
                let mut v = vec![0.0; d];
                v[c % d] = if c < d { radius } else { -radius };
                v
            } else {
                let raw: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = raw
                    .iter()
                    .map(|x: &f64| x * x)
                    .sum::<f64>()
                    .sqrt()
                    .max(1e-12);
                raw.iter().map(|x| x * separation / norm).collect()
            }
        })
        .collect();

    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for &mu in &centers[c] {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push(mu + z);
        }
        labels.push(c);
    }
    Dataset::new(InputData::Features { dim: d, values }, labels, classes)
}

/// Label of a token sequence: 0 if `TOKEN_A` occurs more often than
/// `TOKEN_B`, 1 if less often, `None` on a tie.
pub fn majority_label(seq: &[usize]) -> Option<usize> {
    let a = seq.iter().filter(|&&t| t == TOKEN_A).count();
    let b = seq.iter().filter(|&&t| t == TOKEN_B).count();
    match a.cmp(&b) {
        std::cmp::Ordering::Greater => Some(0),
        std::cmp::Ordering::Less => Some(1),
        std::cmp::Ordering::Equal => None,
    }
}

/// Sequences of length `seq` starting with [`CLS_TOKEN`]; each other position
/// is `TOKEN_A` or `TOKEN_B` with probability 1/4 each and a filler token
/// otherwise. Tied draws are regenerated; sample `i` is then forced to label
/// `i % 2` by swapping the two content tokens, so labels are balanced.
pub fn make_majority_token_task(n: usize, seq: usize, vocab: usize, seed: u64) -> Result<Dataset> {
    if vocab < 4 {
        return Err(Error::contract(format!(
            "vocab must be at least 4, got {vocab}"
        )));
    }
    if seq < 2 {
        return Err(Error::contract(format!(
            "sequence length must leave room for content after the class token, got {seq}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = Vec::with_capacity(n * seq);
    let mut labels = Vec::with_capacity(n);
    let mut row = vec![CLS_TOKEN; seq];
    for i in 0..n {
        let label = loop {
            for t in row.iter_mut().skip(1) {
                let u: f64 = rng.random();
                *t = if u < 0.25 {
                    TOKEN_A
                } else if u < 0.5 {
                    TOKEN_B
                } else {
                    rng.random_range(3..vocab)
                };
            }
            if let Some(l) = majority_label(&row) {
                break l;
            }
        };
        let want = i % 2;
        if label != want {
            for t in row.iter_mut() {
                *t = match *t {
                    TOKEN_A => TOKEN_B,
                    TOKEN_B => TOKEN_A,
                    other => other,
                };
            }
        }
        debug_assert_eq!(majority_label(&row), Some(want));
        ids.extend_from_slice(&row);
        labels.push(want);
    }
    Dataset::new(InputData::Tokens { seq_len: seq, ids }, labels, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_balance_and_determinism() {
        let d = make_blobs(4, 3, 2, 5.0, 1).unwrap();
        assert_eq!(d.labels(), &[0, 1, 0, 1]);
        let again = make_blobs(4, 3, 2, 5.0, 1).unwrap();
        let bits = |ds: &Dataset| match ds.inputs() {
            InputData::Features { values, .. } => {
                values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            }
            _ => unreachable!(),
        };
        assert_eq!(bits(&d), bits(&again));
        assert_ne!(bits(&d), bits(&make_blobs(4, 3, 2, 5.0, 2).unwrap()));
        assert!(make_blobs(1, 3, 2, 5.0, 1).is_err());
    }

    #[test]
    fn many_classes_get_random_centers() {
        let d = make_blobs(30, 1, 5, 4.0, 7).unwrap();
        let mut counts = [0; 5];
        for &y in d.labels() {
            counts[y] += 1;
        }
        assert_eq!(counts, [6; 5]);
    }

    #[test]
    fn majority_examples() {
        assert_eq!(
            majority_label(&[CLS_TOKEN, TOKEN_A, TOKEN_A, TOKEN_A]),
            Some(0)
        );
        assert_eq!(majority_label(&[TOKEN_A; 5]), Some(0));
        assert_eq!(majority_label(&[CLS_TOKEN, TOKEN_B, 5, 7]), Some(1));
        assert_eq!(majority_label(&[CLS_TOKEN, TOKEN_A, TOKEN_B]), None);
    }

    #[test]
    fn majority_task_is_consistent_and_balanced() {
        for n in [1, 2, 7, 100, 101] {
            let d = make_majority_token_task(n, 8, 16, 3).unwrap();
            let ones = d.labels().iter().filter(|&&y| y == 1).count();
            let zeros = n - ones;
            assert!(ones.abs_diff(zeros) <= 1);
            let InputData::Tokens { seq_len, ids } = d.inputs() else {
                unreachable!()
            };
            for (i, y) in d.labels().iter().enumerate() {
                let row = &ids[i * seq_len..(i + 1) * seq_len];
                assert_eq!(row[0], CLS_TOKEN);
                assert!(row.iter().all(|&t| t < 16));
                assert_eq!(majority_label(row), Some(*y));
            }
        }
        assert!(make_majority_token_task(4, 8, 3, 0).is_err());
    }
}
