use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{EvalPoint, ModelSpec};
use crate::tensor::Layer;

/// A contiguous run of prefix layers that ends with a ReLU (and whatever
/// pooling follows it), or the trailing linear remainder of a prefix that
/// stops at a linear output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SubBlock {
    pub layers: Range<usize>,
    pub ends_at: EvalPoint,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

impl SubBlock {
    pub fn relu_count(&self, spec: &ModelSpec) -> usize {
        spec.layers[self.layers.clone()]
            .iter()
            .filter(|l| **l == Layer::Relu)
            .count()
    }

    pub fn is_partial(&self) -> bool {
        !self.ends_at.post_relu
    }
}

/// Splits the layers before `point` into sub-blocks, one per ReLU. The seams
/// between consecutive sub-blocks are the distillation points.
pub fn partition_subblocks(spec: &ModelSpec, point: EvalPoint) -> Result<Vec<SubBlock>> {
    let end = spec.prefix_len(point)?;
    let shapes = spec.layer_shapes()?;
    let mut blocks = Vec::new();
    let mut start = 0;
    for e in spec.extents()? {
        if e.point > point {
            break;
        }
        if e.point.post_relu {
            blocks.push((start..e.end, e.point));
            start = e.end;
        }
    }
    if start < end {
        blocks.push((start..end, point));
    }
    if blocks.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no layers before eval point {point}"
        )));
    }
    Ok(blocks
        .into_iter()
        .map(|(layers, ends_at)| SubBlock {
            in_shape: shapes[layers.start].clone(),
            out_shape: shapes[layers.end].clone(),
            layers,
            ends_at,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        ModelSpec::new(
            "t",
            [1, 8, 8],
            2,
            vec![
                Layer::conv(2, 3, 1, 1, 1),
                Layer::Relu,
                Layer::max_pool(2, 2),
                Layer::conv(2, 3, 1, 1, 1),
                Layer::Relu,
                Layer::Flatten,
                Layer::dense(2),
            ],
        )
        .unwrap()
    }

    #[test]
    fn two_relus_two_blocks() {
        let b = partition_subblocks(&spec(), EvalPoint::relu(2)).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].layers, 0..3);
        assert_eq!(b[1].layers, 3..6);
        assert_eq!(b[1].out_shape, vec![32]);
        assert!(b.iter().all(|s| s.relu_count(&spec()) == 1));
    }

    #[test]
    fn first_relu_is_one_block() {
        let b = partition_subblocks(&spec(), EvalPoint::relu(1)).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].out_shape, vec![2, 4, 4]);
    }

    #[test]
    fn linear_point_adds_partial_block() {
        let b = partition_subblocks(&spec(), EvalPoint::linear(2)).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[1].layers, 3..4);
        assert!(b[1].is_partial());
        assert_eq!(b[1].relu_count(&spec()), 0);
    }

    #[test]
    fn no_relu_prefix_is_single_partial() {
        let b = partition_subblocks(&spec(), EvalPoint::linear(1)).unwrap();
        assert_eq!(b.len(), 1);
        assert!(b[0].is_partial());
    }
}
