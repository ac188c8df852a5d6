use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Conv2dDims, PoolDims};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn dims(&self, in_shape: &[usize]) -> Conv2dDims {
        Conv2dDims {
            in_channels: in_shape[0],
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            dilation: self.dilation,
            in_h: in_shape[1],
            in_w: in_shape[2],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGeom {
    pub kernel: usize,
    pub stride: usize,
}

impl PoolGeom {
    pub fn dims(&self, in_shape: &[usize]) -> PoolDims {
        PoolDims {
            channels: in_shape[0],
            kernel: self.kernel,
            stride: self.stride,
            in_h: in_shape[1],
            in_w: in_shape[2],
        }
    }
}

/// A unary layer. Residual addition is a binary op and lives on the tape
/// ([`super::Tape::add`]) and in [`ops`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv2d(ConvGeom),
    Dense { out_features: usize },
    Relu,
    MaxPool(PoolGeom),
    AvgPool(PoolGeom),
    Flatten,
    UpsampleNearest { factor: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    pub fn conv(
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Self {
        Layer::Conv2d(ConvGeom {
            out_channels,
            kernel,
            stride,
            padding,
            dilation,
        })
    }

    pub fn dense(out_features: usize) -> Self {
        Layer::Dense { out_features }
    }

    pub fn max_pool(kernel: usize, stride: usize) -> Self {
        Layer::MaxPool(PoolGeom { kernel, stride })
    }

    pub fn avg_pool(kernel: usize, stride: usize) -> Self {
        Layer::AvgPool(PoolGeom { kernel, stride })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Dense { .. } => "dense",
            Layer::Relu => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::AvgPool(_) => "avgpool",
            Layer::Flatten => "flatten",
            Layer::UpsampleNearest { .. } => "upsample_nearest",
        }
    }

    /// Conv and dense layers: the ones that own parameters.
    pub fn is_linear(&self) -> bool {
        matches!(self, Layer::Conv2d(_) | Layer::Dense { .. })
    }

    /// Output sample shape (no batch dimension) for an input sample shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<()> {
            if input.len() != 3 {
                return Err(Error::Shape {
                    layer: format!("{what} expects (C, H, W) input"),
                    expected: vec![0, 0, 0],
                    actual: input.to_vec(),
                });
            }
            Ok(())
        };
        match *self {
            Layer::Conv2d(g) => {
                spatial("conv2d")?;
                if g.kernel == 0 || g.stride == 0 || g.dilation == 0 || g.out_channels == 0 {
                    return Err(Error::InvalidModel(format!("degenerate conv2d {g:?}")));
                }
                let oh = Conv2dDims::out_len(input[1], g.kernel, g.stride, g.padding, g.dilation);
                let ow = Conv2dDims::out_len(input[2], g.kernel, g.stride, g.padding, g.dilation);
                match (oh, ow) {
                    (Some(h), Some(w)) => Ok(vec![g.out_channels, h, w]),
                    _ => Err(Error::shape(
                        "conv2d (input smaller than dilated kernel)",
                        &[g.kernel],
                        input,
                    )),
                }
            }
            Layer::Dense { out_features } => {
                if out_features == 0 {
                    return Err(Error::InvalidModel("dense with zero outputs".into()));
                }
                Ok(vec![out_features])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool(g) | Layer::AvgPool(g) => {
                spatial(self.name())?;
                let oh = Conv2dDims::out_len(input[1], g.kernel, g.stride, 0, 1);
                let ow = Conv2dDims::out_len(input[2], g.kernel, g.stride, 0, 1);
                match (oh, ow) {
                    (Some(h), Some(w)) if g.kernel > 0 => Ok(vec![input[0], h, w]),
                    _ => Err(Error::shape(self.name(), &[g.kernel, g.kernel], input)),
                }
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::UpsampleNearest { factor } => {
                spatial("upsample_nearest")?;
                if factor == 0 {
                    return Err(Error::InvalidModel("upsample factor 0".into()));
                }
                Ok(vec![input[0], input[1] * factor, input[2] * factor])
            }
        }
    }

    /// `(weight shape, bias shape)` for parametric layers.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Conv2d(g) => Some((
                vec![g.out_channels, input[0], g.kernel, g.kernel],
                vec![g.out_channels],
            )),
            Layer::Dense { out_features } => Some((
                vec![out_features, input.iter().product()],
                vec![out_features],
            )),
            _ => None,
        }
    }

    /// Plain forward pass on a batched input.
    pub fn forward(&self, params: Option<&LayerParams>, x: &Tensor) -> Result<Tensor> {
        let in_shape = x.sample_shape();
        let out_shape = self.output_shape(in_shape)?;
        let batch = x.batch();
        let mut full_out = vec![batch];
        full_out.extend_from_slice(&out_shape);
        let data = match *self {
            Layer::Conv2d(g) => {
                let p = self.expect_params(params, in_shape)?;
                let d = g.dims(in_shape);
                let mut y = ops::conv2d(x.data(), batch, p.weight.data(), &d);
                ops::add_channel_bias(&mut y, p.bias.data(), d.out_h() * d.out_w());
                y
            }
            Layer::Dense { out_features } => {
                let p = self.expect_params(params, in_shape)?;
                let mut y = ops::dense(
                    x.data(),
                    batch,
                    p.weight.data(),
                    x.sample_len(),
                    out_features,
                );
                ops::add_channel_bias(&mut y, p.bias.data(), 1);
                y
            }
            Layer::Relu => ops::relu(x.data()),
            Layer::MaxPool(g) => ops::maxpool(x.data(), batch, &g.dims(in_shape)).0,
            Layer::AvgPool(g) => ops::avgpool(x.data(), batch, &g.dims(in_shape)),
            Layer::Flatten => x.data().to_vec(),
            Layer::UpsampleNearest { factor } => ops::upsample_nearest(
                x.data(),
                batch * in_shape[0],
                in_shape[1],
                in_shape[2],
                factor,
            ),
        };
        Tensor::new(full_out, data)
    }

    pub(crate) fn expect_params<'a>(
        &self,
        params: Option<&'a LayerParams>,
        in_shape: &[usize],
    ) -> Result<&'a LayerParams> {
        let (ws, bs) = self.param_shapes(in_shape).expect("parametric layer");
        let p = params.ok_or_else(|| {
            Error::InvalidModel(format!("{} layer has no parameters", self.name()))
        })?;
        if p.weight.shape() != ws.as_slice() {
            return Err(Error::shape(
                format!("{} weight", self.name()),
                &ws,
                p.weight.shape(),
            ));
        }
        if p.bias.shape() != bs.as_slice() {
            return Err(Error::shape(
                format!("{} bias", self.name()),
                &bs,
                p.bias.shape(),
            ));
        }
        Ok(p)
    }
}

/// Uniform in `[-sqrt(1/fan_in), sqrt(1/fan_in)]` for weights and biases.
pub fn init_params<R: Rng + ?Sized>(
    layer: &Layer,
    in_shape: &[usize],
    rng: &mut R,
) -> Option<LayerParams> {
    let (ws, bs) = layer.param_shapes(in_shape)?;
    let fan_in: usize = ws[1..].iter().product();
    let bound = (1.0 / fan_in as f64).sqrt();
    Some(LayerParams {
        weight: Tensor::uniform(&ws, -bound, bound, rng),
        bias: Tensor::uniform(&bs, -bound, bound, rng),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_matches_definition() {
        let x = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = Layer::Relu.forward(None, &x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn all_ones_conv_counts_overlap() {
        let layer = Layer::conv(1, 3, 1, 1, 1);
        let params = LayerParams {
            weight: Tensor::full(&[1, 1, 3, 3], 1.0),
            bias: Tensor::zeros(&[1]),
        };
        let x = Tensor::full(&[1, 1, 4, 4], 1.0);
        let y = layer.forward(Some(&params), &x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[5], 9.0);
        assert_eq!(y.data()[15], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn dilated_conv_output_size() {
        let layer = Layer::conv(2, 3, 1, 0, 2);
        assert_eq!(layer.output_shape(&[1, 8, 8]).unwrap(), vec![2, 4, 4]);
    }

    #[test]
    fn conv_shape_error_names_layer() {
        let layer = Layer::conv(2, 3, 1, 0, 1);
        let err = layer.output_shape(&[4]).unwrap_err().to_string();
        assert!(err.contains("conv2d"), "{err}");
        let params = LayerParams {
            weight: Tensor::zeros(&[2, 3, 3, 3]),
            bias: Tensor::zeros(&[2]),
        };
        let err = layer
            .forward(Some(&params), &Tensor::zeros(&[1, 1, 5, 5]))
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("conv2d weight")
                && err.contains("[2, 1, 3, 3]")
                && err.contains("[2, 3, 3, 3]"),
            "{err}"
        );
    }

    #[test]
    fn pools_and_upsample() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 4.0, 3.0, 2.0]).unwrap();
        assert_eq!(
            Layer::max_pool(2, 2).forward(None, &x).unwrap().data(),
            &[4.0]
        );
        assert_eq!(
            Layer::avg_pool(2, 2).forward(None, &x).unwrap().data(),
            &[2.5]
        );
        let up = Layer::UpsampleNearest { factor: 2 }
            .forward(None, &x)
            .unwrap();
        assert_eq!(up.shape(), &[1, 1, 4, 4]);
        assert_eq!(&up.data()[..4], &[1.0, 1.0, 4.0, 4.0]);
    }
}
