use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::FixedCfg;
use crate::model::EvalPoint;
use crate::tensor::Layer;

/// What the server discloses about its crypto layers: architecture only,
/// no weights and nothing past the boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CryptoArchMeta {
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
    pub boundary: EvalPoint,
    pub batch: usize,
    pub fixed: FixedCfg,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum StepKind {
    Input,
    Linear,
    Relu,
    MaxPool,
    AvgPool,
    Flatten,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Step {
    pub kind: StepKind,
    /// Index into the model's layers (`None` for the input step).
    pub layer: Option<usize>,
    /// Batched input and output shapes.
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

impl Step {
    pub fn label(&self, layers: &[Layer]) -> String {
        match self.layer {
            Some(i) => format!("layer {i} ({})", layers[i].name()),
            None => "input".to_string(),
        }
    }
}

/// The crypto-phase steps every endpoint walks in lockstep. Step `k` is op
/// `k + 1` in the transcript; op 0 is setup.
pub(crate) fn schedule(meta: &CryptoArchMeta) -> Result<Vec<Step>> {
    let mut shape: Vec<usize> = std::iter::once(meta.batch)
        .chain(meta.input_shape)
        .collect();
    let mut steps = vec![Step {
        kind: StepKind::Input,
        layer: None,
        input: shape.clone(),
        output: shape.clone(),
    }];
    for (i, layer) in meta.layers.iter().enumerate() {
        let kind = match layer {
            Layer::Conv2d(_) | Layer::Dense { .. } => StepKind::Linear,
            Layer::Relu => StepKind::Relu,
            Layer::MaxPool(_) => StepKind::MaxPool,
            Layer::AvgPool(_) => StepKind::AvgPool,
            Layer::Flatten => StepKind::Flatten,
            Layer::UpsampleNearest { .. } => {
                return Err(Error::InvalidModel(format!(
                    "layer {i}: upsampling cannot run in the crypto phase"
                )))
            }
        };
        let mut out = vec![meta.batch];
        out.extend(layer.output_shape(&shape[1..])?);
        steps.push(Step {
            kind,
            layer: Some(i),
            input: shape,
            output: out.clone(),
        });
        shape = out;
    }
    Ok(steps)
}
