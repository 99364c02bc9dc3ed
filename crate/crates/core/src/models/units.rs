use std::fmt;
use std::str::FromStr;

use super::encoder::{BLOCK_PARAM_COUNT, EMBED_PARAM_COUNT};
use super::{Architecture, Model};
use crate::error::{Error, Result};

/// How parameters are grouped into line-searched units.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionScheme {
    /// One unit holding every parameter.
    Whole,
    /// Consecutive layers grouped into `n` units. For the encoder, the
    /// embedding and the head always get a unit of their own and the blocks
    /// are spread over the remaining `n - 2`.
    PerLayer(usize),
    /// Encoder only: query, key and value matrices of all blocks form one
    /// unit each, next to embedding, feed-forward (everything else inside the
    /// blocks) and head units.
    Qkv,
}

impl fmt::Display for PartitionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionScheme::Whole => write!(f, "whole"),
            PartitionScheme::PerLayer(n) => write!(f, "per_layer:{n}"),
            PartitionScheme::Qkv => write!(f, "qkv"),
        }
    }
}

impl FromStr for PartitionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "whole" => Ok(PartitionScheme::Whole),
            "qkv" => Ok(PartitionScheme::Qkv),
            other => {
                let n = other
                    .strip_prefix("per_layer:")
                    .and_then(|n| n.trim().parse::<usize>().ok())
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown partition `{other}` (expected whole, qkv or per_layer:<n>)"
                        ))
                    })?;
                Ok(PartitionScheme::PerLayer(n))
            }
        }
    }
}

/// Sizes of `groups` consecutive runs covering `blocks` blocks.
///
/// Sizes differ by at most one. The larger runs go to odd positions first
/// and then to even positions from the back, so 12 blocks in 8 groups give
/// `1,2,1,2,1,2,1,2`.
pub fn split_blocks(blocks: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || groups > blocks {
        return Err(Error::contract(format!(
            "cannot spread {blocks} blocks over {groups} units"
        )));
    }
    let mut sizes = vec![blocks / groups; groups];
    let mut extra = blocks % groups;
    let order = (1..groups).step_by(2).chain((0..groups).step_by(2).rev());
    for g in order {
        if extra == 0 {
            break;
        }
        sizes[g] += 1;
        extra -= 1;
    }
    Ok(sizes)
}

fn run_label(prefix: &str, start: usize, len: usize) -> String {
    if len == 1 {
        format!("{prefix}{start}")
    } else {
        format!("{prefix}s{}-{}", start, start + len - 1)
    }
}

pub(super) fn labels(model: &Model, scheme: &PartitionScheme) -> Result<Vec<String>> {
    let n_params = model.params().len();
    if *scheme == PartitionScheme::Whole || *scheme == PartitionScheme::PerLayer(1) {
        return Ok(vec!["all".to_string(); n_params]);
    }
    match (model.architecture(), scheme) {
        (Architecture::LogReg { .. }, PartitionScheme::PerLayer(n)) => Err(Error::contract(
            format!("logistic regression has one layer, cannot split into {n} units"),
        )),
        (Architecture::Mlp { depth, .. }, PartitionScheme::PerLayer(n)) => {
            let sizes = split_blocks(*depth, *n).map_err(|_| {
                Error::contract(format!(
                    "MLP has {depth} layers, cannot split into {n} units"
                ))
            })?;
            let mut out = Vec::with_capacity(n_params);
            let mut start = 0;
            for len in sizes {
                let label = if len == 1 && start == depth - 1 {
                    "head".to_string()
                } else {
                    run_label("layer", start, len)
                };
                out.extend(std::iter::repeat_n(label, 2 * len));
                start += len;
            }
            Ok(out)
        }
        (Architecture::Encoder(spec), PartitionScheme::PerLayer(n)) => {
            let mut out = Vec::with_capacity(n_params);
            if *n == 2 {
                out.extend(std::iter::repeat_n(
                    "body".to_string(),
                    EMBED_PARAM_COUNT + spec.blocks * BLOCK_PARAM_COUNT,
                ));
            } else {
                let sizes = split_blocks(spec.blocks, n - 2).map_err(|_| {
                    Error::contract(format!(
                        "encoder has {} blocks, cannot split into {n} units",
                        spec.blocks
                    ))
                })?;
                out.extend(std::iter::repeat_n(
                    "embedding".to_string(),
                    EMBED_PARAM_COUNT,
                ));
                let mut start = 0;
                for len in sizes {
                    let label = run_label("block", start, len);
                    out.extend(std::iter::repeat_n(label, len * BLOCK_PARAM_COUNT));
                    start += len;
                }
            }
            out.extend(std::iter::repeat_n("head".to_string(), 2));
            Ok(out)
        }
        (Architecture::Encoder(spec), PartitionScheme::Qkv) => {
            if spec.blocks == 0 {
                return Err(Error::contract(
                    "qkv split needs at least one encoder block",
                ));
            }
            let mut out = Vec::with_capacity(n_params);
            out.extend(std::iter::repeat_n(
                "embedding".to_string(),
                EMBED_PARAM_COUNT,
            ));
            for _ in 0..spec.blocks {
                out.push("query".into());
                out.push("key".into());
                out.push("value".into());
                out.extend(std::iter::repeat_n(
                    "feed_forward".to_string(),
                    BLOCK_PARAM_COUNT - 3,
                ));
            }
            out.extend(std::iter::repeat_n("head".to_string(), 2));
            Ok(out)
        }
        (_, PartitionScheme::Qkv) => Err(Error::contract(
            "qkv split is only defined for the transformer encoder",
        )),
        (_, PartitionScheme::Whole) => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, EncoderSpec};

    fn distinct(labels: &[String]) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for l in labels {
            if !seen.contains(l) {
                seen.push(l.clone());
            }
        }
        seen
    }

    #[test]
    fn twelve_blocks_in_eight_groups_alternate() {
        assert_eq!(split_blocks(12, 8).unwrap(), vec![1, 2, 1, 2, 1, 2, 1, 2]);
        assert_eq!(split_blocks(4, 4).unwrap(), vec![1, 1, 1, 1]);
        assert_eq!(split_blocks(7, 4).unwrap(), vec![1, 2, 2, 2]);
        assert_eq!(split_blocks(5, 2).unwrap(), vec![2, 3]);
        assert!(split_blocks(3, 4).is_err());
        assert!(split_blocks(3, 0).is_err());
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!(
            "whole".parse::<PartitionScheme>().unwrap(),
            PartitionScheme::Whole
        );
        assert_eq!(
            "qkv".parse::<PartitionScheme>().unwrap(),
            PartitionScheme::Qkv
        );
        assert_eq!(
            "per_layer:10".parse::<PartitionScheme>().unwrap(),
            PartitionScheme::PerLayer(10)
        );
        for bad in ["per_layer:0", "per_layer:", "layers", ""] {
            assert!(bad.parse::<PartitionScheme>().is_err(), "{bad}");
        }
        assert_eq!(PartitionScheme::PerLayer(4).to_string(), "per_layer:4");
    }

    #[test]
    fn mlp_per_layer_three() {
        let m = Model::mlp(4, 5, 3, 2, Activation::Relu, 0).unwrap();
        let l = m.unit_labels(&PartitionScheme::PerLayer(3)).unwrap();
        assert_eq!(distinct(&l), vec!["layer0", "layer1", "head"]);
        assert_eq!(l.len(), m.params().len());
        let grouped = m.unit_labels(&PartitionScheme::PerLayer(2)).unwrap();
        assert_eq!(distinct(&grouped), vec!["layer0", "layers1-2"]);
        assert!(m.unit_labels(&PartitionScheme::PerLayer(4)).is_err());
        assert!(m.unit_labels(&PartitionScheme::Qkv).is_err());
        assert_eq!(
            distinct(&m.unit_labels(&PartitionScheme::Whole).unwrap()),
            vec!["all"]
        );
    }

    #[test]
    fn encoder_per_layer_ten_on_twelve_blocks() {
        let spec = EncoderSpec {
            vocab: 4,
            seq_len: 2,
            dim: 2,
            blocks: 12,
            ff_dim: 2,
            classes: 2,
        };
        let m = Model::encoder(spec, 0).unwrap();
        let l = m.unit_labels(&PartitionScheme::PerLayer(10)).unwrap();
        assert_eq!(
            distinct(&l),
            vec![
                "embedding",
                "block0",
                "blocks1-2",
                "block3",
                "blocks4-5",
                "block6",
                "blocks7-8",
                "block9",
                "blocks10-11",
                "head"
            ]
        );
        assert_eq!(l.first().unwrap(), "embedding");
        assert_eq!(l.last().unwrap(), "head");
    }

    #[test]
    fn encoder_qkv_groups_across_blocks() {
        let spec = EncoderSpec {
            vocab: 4,
            seq_len: 2,
            dim: 2,
            blocks: 3,
            ff_dim: 2,
            classes: 2,
        };
        let m = Model::encoder(spec, 0).unwrap();
        let l = m.unit_labels(&PartitionScheme::Qkv).unwrap();
        assert_eq!(
            distinct(&l),
            vec!["embedding", "query", "key", "value", "feed_forward", "head"]
        );
        for (p, label) in m.params().iter().zip(&l) {
            if p.name.ends_with("attn.query") {
                assert_eq!(label, "query");
            }
            if p.name.ends_with("attn.output") {
                assert_eq!(label, "feed_forward");
            }
        }
        assert_eq!(
            distinct(&m.unit_labels(&PartitionScheme::PerLayer(2)).unwrap()),
            vec!["body", "head"]
        );
        assert!(m.unit_labels(&PartitionScheme::PerLayer(6)).is_err());
    }

    #[test]
    fn logreg_only_supports_one_unit() {
        let m = Model::logreg(3, 2, 0).unwrap();
        assert!(m.unit_labels(&PartitionScheme::PerLayer(1)).is_ok());
        assert!(m.unit_labels(&PartitionScheme::PerLayer(2)).is_err());
        assert!(m.unit_labels(&PartitionScheme::Qkv).is_err());
    }
}
