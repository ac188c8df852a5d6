//! Sequential CNNs, evaluation points, training and the `.c2m` model file.
//!
//! Activations are addressed by [`EvalPoint`]: block `l` ends after the
//! linear op (conv or dense) of the `l`-th block, `l.5` after its ReLU.
//! Pooling and flatten layers attach to whichever point precedes them, so
//! `[conv, relu, pool, dense]` has the points `1, 1.5, 2`.

mod io;
mod train;
pub mod zoo;

pub use io::{
    load_model, model_hash, network_hash, read_model, save_model, write_model, MODEL_FORMAT_VERSION,
};
pub use train::{train_model, TrainConfig};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::{init_params, Layer, LayerParams, Tensor};

/// A position in the network where an activation is observable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EvalPoint {
    pub block: usize,
    pub post_relu: bool,
}

impl EvalPoint {
    pub fn linear(block: usize) -> Self {
        EvalPoint {
            block,
            post_relu: false,
        }
    }

    pub fn relu(block: usize) -> Self {
        EvalPoint {
            block,
            post_relu: true,
        }
    }

    /// `3` for the linear output, `3.5` for the ReLU output.
    pub fn as_f64(&self) -> f64 {
        self.block as f64 + if self.post_relu { 0.5 } else { 0.0 }
    }
}

impl fmt::Display for EvalPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.post_relu {
            write!(f, "{}.5", self.block)
        } else {
            write!(f, "{}", self.block)
        }
    }
}

impl FromStr for EvalPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidArgument(format!(
                "invalid eval point {s:?}; expected e.g. \"3\" or \"3.5\""
            ))
        };
        let (int, post_relu) = match s.strip_suffix(".5") {
            Some(head) => (head, true),
            None => (s, false),
        };
        let block: usize = int.parse().map_err(|_| bad())?;
        if block == 0 {
            return Err(bad());
        }
        Ok(EvalPoint { block, post_relu })
    }
}

impl Serialize for EvalPoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for EvalPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// `(channels, height, width)`.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<Layer>,
}

/// One evaluation point and the number of leading layers that produce it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PointExtent {
    pub point: EvalPoint,
    pub end: usize,
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        input_shape: [usize; 3],
        num_classes: usize,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        let spec = ModelSpec {
            name: name.into(),
            input_shape,
            num_classes,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidModel("model has no layers".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidModel("num_classes must be positive".into()));
        }
        match self.layers.last() {
            Some(Layer::Dense { out_features }) if *out_features == self.num_classes => {}
            other => {
                return Err(Error::InvalidModel(format!(
                    "last layer must be dense({}), found {:?}",
                    self.num_classes, other
                )))
            }
        }
        self.layer_shapes()?;
        self.extents()?;
        Ok(())
    }

    /// Sample shapes: entry `i` is the input of layer `i`; the final entry
    /// is the model output.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| match e {
                    Error::Shape {
                        layer: l,
                        expected,
                        actual,
                    } => Error::Shape {
                        layer: format!("layer {i} ({l})"),
                        expected,
                        actual,
                    },
                    other => other,
                })?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Evaluation points with the layer index where each one ends.
    pub fn extents(&self) -> Result<Vec<PointExtent>> {
        let mut points: Vec<EvalPoint> = Vec::new();
        let mut starts: Vec<usize> = Vec::new();
        let mut block = 0;
        let mut relu_in_block = false;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                l if l.is_linear() => {
                    block += 1;
                    relu_in_block = false;
                    points.push(EvalPoint::linear(block));
                    starts.push(i);
                }
                Layer::Relu => {
                    if block == 0 {
                        return Err(Error::InvalidModel(format!(
                            "layer {i}: relu before any linear layer"
                        )));
                    }
                    if relu_in_block {
                        return Err(Error::InvalidModel(format!(
                            "layer {i}: second relu in block {block}"
                        )));
                    }
                    relu_in_block = true;
                    points.push(EvalPoint::relu(block));
                    starts.push(i);
                }
                Layer::MaxPool(_) | Layer::AvgPool(_) | Layer::Flatten => {
                    if block == 0 {
                        return Err(Error::InvalidModel(format!(
                            "layer {i}: {} before any linear layer",
                            layer.name()
                        )));
                    }
                }
                Layer::UpsampleNearest { .. } => {
                    return Err(Error::InvalidModel(format!(
                        "layer {i}: upsampling is not allowed in a served model"
                    )));
                }
                _ => unreachable!(),
            }
        }
        let n = self.layers.len();
        Ok(points
            .iter()
            .enumerate()
            .map(|(k, &point)| PointExtent {
                point,
                end: starts.get(k + 1).copied().unwrap_or(n),
            })
            .collect())
    }

    pub fn eval_points(&self) -> Result<Vec<EvalPoint>> {
        Ok(self.extents()?.into_iter().map(|e| e.point).collect())
    }

    /// Number of leading layers executed to reach `p`.
    pub fn prefix_len(&self, p: EvalPoint) -> Result<usize> {
        self.extents()?
            .into_iter()
            .find(|e| e.point == p)
            .map(|e| e.end)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("eval point {p} is not in model {}", self.name))
            })
    }

    /// Sample shape of the activation at `p`.
    pub fn activation_shape(&self, p: EvalPoint) -> Result<Vec<usize>> {
        let end = self.prefix_len(p)?;
        Ok(self.layer_shapes()?.swap_remove(end))
    }

    /// Random initialization, seeded.
    pub fn init(&self, seed: u64) -> Result<Network> {
        self.validate()?;
        let shapes = self.layer_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = self
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, s)| init_params(l, s, &mut rng))
            .collect();
        Ok(Network {
            spec: self.clone(),
            params,
        })
    }
}

/// A model spec with concrete parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: ModelSpec,
    /// One entry per layer; `Some` exactly for conv and dense.
    pub params: Vec<Option<LayerParams>>,
}

impl Network {
    fn check_input(&self, x: &Tensor, expected: &[usize], what: &str) -> Result<()> {
        if x.shape().len() < 2 || x.sample_shape() != expected {
            let mut e = vec![x.shape().first().copied().unwrap_or(0)];
            e.extend_from_slice(expected);
            return Err(Error::shape(what, &e, x.shape()));
        }
        Ok(())
    }

    /// Runs layers `range` on `x`.
    pub fn forward_layers(&self, x: &Tensor, range: std::ops::Range<usize>) -> Result<Tensor> {
        let mut a = x.clone();
        for i in range {
            a = self.spec.layers[i].forward(self.params[i].as_ref(), &a)?;
        }
        Ok(a)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x, &self.spec.input_shape, "model input")?;
        self.forward_layers(x, 0..self.spec.layers.len())
    }

    /// Activation at `p` for a batched input.
    pub fn forward_prefix(&self, x: &Tensor, p: EvalPoint) -> Result<Tensor> {
        self.check_input(x, &self.spec.input_shape, "model input")?;
        let end = self.spec.prefix_len(p)?;
        self.forward_layers(x, 0..end)
    }

    /// Logits from an activation at `p`.
    pub fn forward_suffix(&self, a: &Tensor, p: EvalPoint) -> Result<Tensor> {
        let end = self.spec.prefix_len(p)?;
        let shapes = self.spec.layer_shapes()?;
        self.check_input(a, &shapes[end], &format!("activation at {p}"))?;
        self.forward_layers(a, end..self.spec.layers.len())
    }

    /// Parameter tensors in manifest order: `(layer index, weight, bias)`.
    pub fn parametric_layers(&self) -> impl Iterator<Item = (usize, &LayerParams)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (i, p)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epoch_losses: Vec<f64>,
    pub final_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub network: Network,
    pub meta: TrainingMeta,
}

impl TrainedModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.network.spec
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.network.forward(x)
    }

    pub fn forward_prefix(&self, x: &Tensor, p: EvalPoint) -> Result<Tensor> {
        self.network.forward_prefix(x, p)
    }

    pub fn forward_suffix(&self, a: &Tensor, p: EvalPoint) -> Result<Tensor> {
        self.network.forward_suffix(a, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(layers: Vec<Layer>, classes: usize) -> Result<ModelSpec> {
        ModelSpec::new("t", [1, 8, 8], classes, layers)
    }

    fn render(points: &[EvalPoint]) -> Vec<String> {
        points.iter().map(|p| p.to_string()).collect()
    }

    #[test]
    fn half_step_indexing() {
        let s = spec(
            vec![
                Layer::conv(2, 3, 1, 1, 1),
                Layer::Relu,
                Layer::conv(2, 3, 1, 1, 1),
                Layer::Relu,
                Layer::dense(3),
            ],
            3,
        )
        .unwrap();
        assert_eq!(
            render(&s.eval_points().unwrap()),
            ["1", "1.5", "2", "2.5", "3"]
        );
    }

    #[test]
    fn pool_folds_into_preceding_point() {
        let s = spec(
            vec![
                Layer::conv(2, 3, 1, 1, 1),
                Layer::Relu,
                Layer::max_pool(2, 2),
                Layer::dense(4),
            ],
            4,
        )
        .unwrap();
        assert_eq!(render(&s.eval_points().unwrap()), ["1", "1.5", "2"]);
        assert_eq!(s.prefix_len(EvalPoint::relu(1)).unwrap(), 3);
        assert_eq!(
            s.activation_shape(EvalPoint::relu(1)).unwrap(),
            vec![2, 4, 4]
        );
    }

    #[test]
    fn empty_model_is_invalid() {
        assert!(spec(vec![], 3).is_err());
        assert!(spec(vec![Layer::conv(2, 3, 1, 1, 1)], 3).is_err());
        assert!(spec(vec![Layer::Relu, Layer::dense(3)], 3).is_err());
    }

    #[test]
    fn eval_point_parse_errors() {
        assert!("0".parse::<EvalPoint>().is_err());
        assert!("2.25".parse::<EvalPoint>().is_err());
        assert!("x".parse::<EvalPoint>().is_err());
        assert_eq!("12.5".parse::<EvalPoint>().unwrap(), EvalPoint::relu(12));
    }

    #[test]
    fn relu_point_is_one_relu_after_linear_point() {
        let s = spec(
            vec![Layer::conv(2, 3, 1, 1, 1), Layer::Relu, Layer::dense(3)],
            3,
        )
        .unwrap();
        let net = s.init(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(&[2, 1, 8, 8], 0.0, 1.0, &mut rng);
        let a1 = net.forward_prefix(&x, EvalPoint::linear(1)).unwrap();
        let a15 = net.forward_prefix(&x, EvalPoint::relu(1)).unwrap();
        assert_eq!(Layer::Relu.forward(None, &a1).unwrap(), a15);
        let last = *s.eval_points().unwrap().last().unwrap();
        assert_eq!(
            net.forward_prefix(&x, last).unwrap(),
            net.forward(&x).unwrap()
        );
    }
}
