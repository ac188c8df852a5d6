use std::num::Wrapping;

use rand::Rng;

use super::{FixedCfg, Ring};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::{ops, Layer};

/// Dense tensor of ring elements. Like [`crate::tensor::Tensor`], the first
/// axis is the batch when one is present.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingTensor {
    pub shape: Vec<usize>,
    pub data: Vec<Ring>,
}

impl RingTensor {
    pub fn new(shape: Vec<usize>, data: Vec<Ring>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidArgument(format!(
                "ring tensor shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(RingTensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        RingTensor {
            shape: shape.to_vec(),
            data: vec![Wrapping(0); shape.iter().product()],
        }
    }

    pub fn random<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let n = shape.iter().product();
        RingTensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| Wrapping(rng.gen::<u64>())).collect(),
        }
    }

    pub fn from_u64(shape: Vec<usize>, data: Vec<u64>) -> Result<Self> {
        Self::new(shape, data.into_iter().map(Wrapping).collect())
    }

    pub fn to_u64(&self) -> Vec<u64> {
        self.data.iter().map(|v| v.0).collect()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("ring reshape", &shape, &self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    fn zip(
        &self,
        other: &RingTensor,
        what: &str,
        f: impl Fn(Ring, Ring) -> Ring,
    ) -> Result<RingTensor> {
        if self.shape != other.shape {
            return Err(Error::shape(what, &self.shape, &other.shape));
        }
        Ok(RingTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &RingTensor) -> Result<RingTensor> {
        self.zip(other, "ring add", |a, b| a + b)
    }

    pub fn sub(&self, other: &RingTensor) -> Result<RingTensor> {
        self.zip(other, "ring sub", |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &RingTensor) -> Result<RingTensor> {
        self.zip(other, "ring mul", |a, b| a * b)
    }

    pub fn neg(&self) -> RingTensor {
        self.map(|v| -v)
    }

    pub fn scale(&self, k: Ring) -> RingTensor {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(Ring) -> Ring) -> RingTensor {
        RingTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Gathers elements by flat index into a 1-D tensor.
    pub fn gather(&self, idx: &[usize]) -> RingTensor {
        RingTensor {
            shape: vec![idx.len()],
            data: idx.iter().map(|&i| self.data[i]).collect(),
        }
    }
}

/// Conv or dense of a batched ring tensor with a ring weight, no bias.
pub fn ring_conv_dense(layer: &Layer, x: &RingTensor, w: &RingTensor) -> Result<RingTensor> {
    let in_shape = &x.shape[1..];
    let batch = x.shape[0];
    let out = layer.output_shape(in_shape)?;
    let (ws, _) = layer
        .param_shapes(in_shape)
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a linear layer", layer.name())))?;
    if w.shape != ws {
        return Err(Error::shape(
            format!("{} weight", layer.name()),
            &ws,
            &w.shape,
        ));
    }
    let data = match *layer {
        Layer::Conv2d(g) => ops::conv2d(&x.data, batch, &w.data, &g.dims(in_shape)),
        Layer::Dense { out_features } => ops::dense(
            &x.data,
            batch,
            &w.data,
            in_shape.iter().product(),
            out_features,
        ),
        _ => unreachable!(),
    };
    let mut shape = vec![batch];
    shape.extend(out);
    RingTensor::new(shape, data)
}

/// Plaintext fixed-point evaluation of layers `0..end` with the same
/// rounding the shared protocol uses: products at scale `2f`, bias added at
/// `2f`, then floor division by `2^f`.
pub fn fixed_forward(
    network: &Network,
    x: &RingTensor,
    end: usize,
    cfg: &FixedCfg,
) -> Result<RingTensor> {
    let mut a = x.clone();
    for i in 0..end {
        let layer = &network.spec.layers[i];
        let in_shape = a.shape[1..].to_vec();
        let batch = a.shape[0];
        a = match *layer {
            Layer::Conv2d(_) | Layer::Dense { .. } => {
                let p = layer.expect_params(network.params[i].as_ref(), &in_shape)?;
                let w = cfg.encode_tensor(&p.weight)?;
                let mut z = ring_conv_dense(layer, &a, &w)?;
                let bias = p
                    .bias
                    .data()
                    .iter()
                    .map(|&b| cfg.encode_double(b))
                    .collect::<Result<Vec<_>>>()?;
                let plane = z.len() / (batch * bias.len());
                ops::add_channel_bias(&mut z.data, &bias, plane);
                z.map(|v| cfg.truncate(v))
            }
            Layer::Relu => a.map(|v| if (v.0 as i64) > 0 { v } else { Wrapping(0) }),
            Layer::MaxPool(g) => {
                let d = g.dims(&in_shape);
                let idx = d.window_indices(batch);
                let data =
                    idx.chunks(d.window())
                        .map(|w| {
                            w.iter()
                                .map(|&j| a.data[j])
                                .fold(None, |best: Option<Ring>, v| match best {
                                    Some(b) if (b.0 as i64) >= (v.0 as i64) => Some(b),
                                    _ => Some(v),
                                })
                        })
                        .map(Option::unwrap)
                        .collect();
                RingTensor::new(vec![batch, d.channels, d.out_h(), d.out_w()], data)?
            }
            Layer::AvgPool(g) => {
                let d = g.dims(&in_shape);
                let k = cfg.encode(1.0 / d.window() as f64)?;
                let data = ops::window_sum(&a.data, batch, &d)
                    .into_iter()
                    .map(|v| cfg.truncate(v * k))
                    .collect();
                RingTensor::new(vec![batch, d.channels, d.out_h(), d.out_w()], data)?
            }
            Layer::Flatten => {
                let n = a.len() / batch;
                a.reshape(vec![batch, n])?
            }
            Layer::UpsampleNearest { .. } => {
                return Err(Error::InvalidModel(
                    "upsampling cannot run under fixed point".into(),
                ));
            }
        };
    }
    Ok(a)
}
