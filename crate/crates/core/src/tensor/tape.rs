use super::layer::{Layer, LayerParams};
use super::ops;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        layer: Layer,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        layer: Layer,
    },
    Reshape {
        x: Var,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    /// `sum((a - b)^2)`, a scalar.
    SquaredDistance {
        a: Var,
        b: Var,
    },
    /// `sum(x * weights)`, a scalar.
    Dot {
        x: Var,
        weights: Tensor,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        grad: Vec<f64>,
    },
    /// `sum_i c_i * s_i` over scalar nodes.
    WeightedSum {
        terms: Vec<(Var, f64)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation so gradients can be replayed in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// An input or parameter; gradients flow into it but not past it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Applies `layer`; for conv and dense, `params` are the `(weight, bias)` leaves.
    pub fn layer(&mut self, layer: &Layer, params: Option<(Var, Var)>, x: Var) -> Result<Var> {
        let xin = self.value(x);
        match *layer {
            Layer::Conv2d(_) | Layer::Dense { .. } => {
                let (w, b) = params.ok_or_else(|| {
                    Error::InvalidModel(format!("{} on tape without parameters", layer.name()))
                })?;
                let p = LayerParams {
                    weight: self.value(w).clone(),
                    bias: self.value(b).clone(),
                };
                let y = layer.forward(Some(&p), xin)?;
                let op = if let Layer::Dense { .. } = layer {
                    Op::Dense { x, w, b }
                } else {
                    Op::Conv2d {
                        x,
                        w,
                        b,
                        layer: *layer,
                    }
                };
                Ok(self.push(y, op))
            }
            Layer::Relu => {
                let y = layer.forward(None, xin)?;
                Ok(self.push(y, Op::Relu { x }))
            }
            Layer::MaxPool(g) => {
                let in_shape = xin.sample_shape().to_vec();
                let out = layer.output_shape(&in_shape)?;
                let (y, argmax) = ops::maxpool(xin.data(), xin.batch(), &g.dims(&in_shape));
                let mut shape = vec![xin.batch()];
                shape.extend(out);
                let y = Tensor::new(shape, y)?;
                Ok(self.push(y, Op::MaxPool { x, argmax }))
            }
            Layer::AvgPool(_) => {
                let y = layer.forward(None, xin)?;
                Ok(self.push(y, Op::AvgPool { x, layer: *layer }))
            }
            Layer::Flatten => {
                let y = layer.forward(None, xin)?;
                Ok(self.push(y, Op::Reshape { x }))
            }
            Layer::UpsampleNearest { factor } => {
                let y = layer.forward(None, xin)?;
                Ok(self.push(y, Op::Upsample { x, factor }))
            }
        }
    }

    /// Residual addition.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    /// Reshape keeping the batch dimension.
    pub fn reshape(&mut self, x: Var, sample_shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let mut shape = vec![v.batch()];
        shape.extend_from_slice(sample_shape);
        let y = v.clone().reshape(&shape)?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.value(a).sub(self.value(b))?.sq_norm();
        Ok(self.push(Tensor::scalar(d), Op::SquaredDistance { a, b }))
    }

    pub fn dot(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        let s = self.value(x).zip_map(&weights, |a, b| a * b)?.sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot { x, weights }))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        let classes = l.sample_len();
        let (loss, grad) = ops::softmax_cross_entropy(l.data(), classes, labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, grad },
        ))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, c) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::shape("weighted_sum term", &[1], t.shape()));
            }
            s += c * t.data()[0];
        }
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        ))
    }

    /// Reverse sweep from the scalar `loss`. Each recorded op is visited
    /// once, from the newest node back to the oldest.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward (loss must be scalar)",
                &[1],
                self.value(loss).shape(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    // Only leaves keep their gradient; intermediate buffers
                    // are dropped once propagated.
                    grads[i] = Some(gy);
                }
                Op::Conv2d { x, w, b, layer } => {
                    let Layer::Conv2d(g) = layer else {
                        unreachable!()
                    };
                    let xv = self.value(*x);
                    let d = g.dims(xv.sample_shape());
                    let (gx, gw) = ops::conv2d_backward(
                        xv.data(),
                        xv.batch(),
                        self.value(*w).data(),
                        &d,
                        gy.data(),
                    );
                    let gb =
                        ops::channel_bias_grad(gy.data(), d.out_channels, d.out_h() * d.out_w());
                    accumulate(&mut grads, *x, xv.shape(), gx);
                    accumulate(&mut grads, *w, self.value(*w).shape(), gw);
                    accumulate(&mut grads, *b, self.value(*b).shape(), gb);
                }
                Op::Dense { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let out = wv.shape()[0];
                    let (gx, gw) = ops::dense_backward(
                        xv.data(),
                        xv.batch(),
                        wv.data(),
                        xv.sample_len(),
                        out,
                        gy.data(),
                    );
                    let gb = ops::channel_bias_grad(gy.data(), out, 1);
                    accumulate(&mut grads, *x, xv.shape(), gx);
                    accumulate(&mut grads, *w, wv.shape(), gw);
                    accumulate(&mut grads, *b, self.value(*b).shape(), gb);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    accumulate(
                        &mut grads,
                        *x,
                        xv.shape(),
                        ops::relu_backward(xv.data(), gy.data()),
                    );
                }
                Op::MaxPool { x, argmax } => {
                    let xv = self.value(*x);
                    accumulate(
                        &mut grads,
                        *x,
                        xv.shape(),
                        ops::maxpool_backward(xv.len(), argmax, gy.data()),
                    );
                }
                Op::AvgPool { x, layer } => {
                    let Layer::AvgPool(g) = layer else {
                        unreachable!()
                    };
                    let xv = self.value(*x);
                    let gx = ops::avgpool_backward(
                        xv.len(),
                        xv.batch(),
                        &g.dims(xv.sample_shape()),
                        gy.data(),
                    );
                    accumulate(&mut grads, *x, xv.shape(), gx);
                }
                Op::Reshape { x } => {
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, xv.shape(), gy.into_data());
                }
                Op::Upsample { x, factor } => {
                    let xv = self.value(*x);
                    let s = xv.shape();
                    let gx =
                        ops::upsample_nearest_backward(gy.data(), s[0] * s[1], s[2], s[3], *factor);
                    accumulate(&mut grads, *x, s, gx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, gy.shape(), gy.data().to_vec());
                    let shape = gy.shape().to_vec();
                    accumulate(&mut grads, *b, &shape, gy.into_data());
                }
                Op::SquaredDistance { a, b } => {
                    let g = gy.data()[0];
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let diff: Vec<f64> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(x, y)| 2.0 * g * (x - y))
                        .collect();
                    accumulate(
                        &mut grads,
                        *b,
                        bv.shape(),
                        diff.iter().map(|v| -v).collect(),
                    );
                    accumulate(&mut grads, *a, av.shape(), diff);
                }
                Op::Dot { x, weights } => {
                    let g = gy.data()[0];
                    let xv = self.value(*x);
                    accumulate(
                        &mut grads,
                        *x,
                        xv.shape(),
                        weights.data().iter().map(|w| w * g).collect(),
                    );
                }
                Op::SoftmaxCrossEntropy { logits, grad } => {
                    let g = gy.data()[0];
                    let lv = self.value(*logits);
                    accumulate(
                        &mut grads,
                        *logits,
                        lv.shape(),
                        grad.iter().map(|v| v * g).collect(),
                    );
                }
                Op::WeightedSum { terms } => {
                    let g = gy.data()[0];
                    for &(v, c) in terms {
                        accumulate(&mut grads, v, &[1], vec![c * g]);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), g).expect("gradient shape matches value"));
        }
    }
}

/// Gradients of leaf values after [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_add_with_zero_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 3], vec![1.0, -2.0, 3.5]).unwrap());
        let z = tape.leaf(Tensor::zeros(&[1, 3]));
        let y = tape.add(x, z).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn shared_input_accumulates() {
        // loss = |x + x - 0|^2 = 4 x^2, dloss/dx = 8x
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let s = tape.add(x, x).unwrap();
        let zero = tape.leaf(Tensor::zeros(&[1, 1]));
        let loss = tape.squared_distance(s, zero).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[24.0]);
    }

    #[test]
    fn weighted_sum_scales_terms() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::zeros(&[1, 2]));
        let d = tape.squared_distance(a, b).unwrap();
        let loss = tape.weighted_sum(&[(d, 3.0)]).unwrap();
        assert_eq!(tape.value(loss).data(), &[15.0]);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[6.0, 12.0]);
        assert_eq!(g.get(b).unwrap().data(), &[-6.0, -12.0]);
    }
}
