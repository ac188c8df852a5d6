//! Raw kernels on flat row-major buffers.
//!
//! The linear kernels (`conv2d`, `dense`, `window_sum`) are generic over
//! [`Element`] so the same loops serve plaintext `f64` evaluation and
//! wrapping `u64` ring arithmetic for the secret-shared layers.

use std::num::Wrapping;
use std::ops::{Add, Mul};

use crate::error::{Error, Result};

pub trait Element: Copy + Default + Add<Output = Self> + Mul<Output = Self> {}

impl Element for f64 {}
impl Element for Wrapping<u64> {}

/// Convolution geometry for one input spatial size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dDims {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl Conv2dDims {
    pub fn out_len(
        in_len: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Option<usize> {
        let span = dilation * (kernel - 1) + 1;
        let padded = in_len + 2 * padding;
        if padded < span || stride == 0 {
            return None;
        }
        Some((padded - span) / stride + 1)
    }

    pub fn out_h(&self) -> usize {
        Self::out_len(
            self.in_h,
            self.kernel,
            self.stride,
            self.padding,
            self.dilation,
        )
        .unwrap_or(0)
    }

    pub fn out_w(&self) -> usize {
        Self::out_len(
            self.in_w,
            self.kernel,
            self.stride,
            self.padding,
            self.dilation,
        )
        .unwrap_or(0)
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }
}

/// Range of output positions `o` with `o*stride + offset - padding` inside `[0, in_len)`.
#[inline]
fn valid_outputs(
    offset: usize,
    padding: usize,
    stride: usize,
    in_len: usize,
    out_len: usize,
) -> (usize, usize) {
    // o*stride >= padding - offset
    let lo = if padding > offset {
        (padding - offset).div_ceil(stride)
    } else {
        0
    };
    // o*stride <= in_len - 1 + padding - offset
    let top = in_len + padding;
    if top <= offset {
        return (0, 0);
    }
    let hi = ((top - 1 - offset) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// `y[n, oc, oh, ow] = sum w[oc, c, kh, kw] * x[n, c, ih, iw]`, no bias.
pub fn conv2d<T: Element>(x: &[T], batch: usize, w: &[T], d: &Conv2dDims) -> Vec<T> {
    let (oh_n, ow_n) = (d.out_h(), d.out_w());
    let in_plane = d.in_h * d.in_w;
    let out_plane = oh_n * ow_n;
    let k = d.kernel;
    let mut y = vec![T::default(); batch * d.out_channels * out_plane];
    for n in 0..batch {
        for oc in 0..d.out_channels {
            let yo = (n * d.out_channels + oc) * out_plane;
            for c in 0..d.in_channels {
                let xo = (n * d.in_channels + c) * in_plane;
                for kh in 0..k {
                    let (oh_lo, oh_hi) =
                        valid_outputs(kh * d.dilation, d.padding, d.stride, d.in_h, oh_n);
                    for kw in 0..k {
                        let wv = w[((oc * d.in_channels + c) * k + kh) * k + kw];
                        let (ow_lo, ow_hi) =
                            valid_outputs(kw * d.dilation, d.padding, d.stride, d.in_w, ow_n);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * d.stride + kh * d.dilation - d.padding;
                            let xrow = xo + ih * d.in_w;
                            let yrow = yo + oh * ow_n;
                            for ow in ow_lo..ow_hi {
                                let iw = ow * d.stride + kw * d.dilation - d.padding;
                                y[yrow + ow] = y[yrow + ow] + wv * x[xrow + iw];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`conv2d`] with respect to input and weight.
pub fn conv2d_backward(
    x: &[f64],
    batch: usize,
    w: &[f64],
    d: &Conv2dDims,
    gy: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (oh_n, ow_n) = (d.out_h(), d.out_w());
    let in_plane = d.in_h * d.in_w;
    let out_plane = oh_n * ow_n;
    let k = d.kernel;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    for n in 0..batch {
        for oc in 0..d.out_channels {
            let yo = (n * d.out_channels + oc) * out_plane;
            for c in 0..d.in_channels {
                let xo = (n * d.in_channels + c) * in_plane;
                for kh in 0..k {
                    let (oh_lo, oh_hi) =
                        valid_outputs(kh * d.dilation, d.padding, d.stride, d.in_h, oh_n);
                    for kw in 0..k {
                        let widx = ((oc * d.in_channels + c) * k + kh) * k + kw;
                        let wv = w[widx];
                        let (ow_lo, ow_hi) =
                            valid_outputs(kw * d.dilation, d.padding, d.stride, d.in_w, ow_n);
                        let mut acc = 0.0;
                        for oh in oh_lo..oh_hi {
                            let ih = oh * d.stride + kh * d.dilation - d.padding;
                            let xrow = xo + ih * d.in_w;
                            let yrow = yo + oh * ow_n;
                            for ow in ow_lo..ow_hi {
                                let iw = ow * d.stride + kw * d.dilation - d.padding;
                                let g = gy[yrow + ow];
                                acc += g * x[xrow + iw];
                                gx[xrow + iw] += g * wv;
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    (gx, gw)
}

/// `y[n, o] = sum_i w[o, i] * x[n, i]`, no bias.
pub fn dense<T: Element>(
    x: &[T],
    batch: usize,
    w: &[T],
    in_features: usize,
    out_features: usize,
) -> Vec<T> {
    let mut y = vec![T::default(); batch * out_features];
    for n in 0..batch {
        let xr = &x[n * in_features..(n + 1) * in_features];
        for o in 0..out_features {
            let wr = &w[o * in_features..(o + 1) * in_features];
            let mut acc = T::default();
            for i in 0..in_features {
                acc = acc + wr[i] * xr[i];
            }
            y[n * out_features + o] = acc;
        }
    }
    y
}

pub fn dense_backward(
    x: &[f64],
    batch: usize,
    w: &[f64],
    in_features: usize,
    out_features: usize,
    gy: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    for n in 0..batch {
        let xr = &x[n * in_features..(n + 1) * in_features];
        for o in 0..out_features {
            let g = gy[n * out_features + o];
            if g == 0.0 {
                continue;
            }
            let wr = &w[o * in_features..(o + 1) * in_features];
            let gwr = &mut gw[o * in_features..(o + 1) * in_features];
            let gxr = &mut gx[n * in_features..(n + 1) * in_features];
            for i in 0..in_features {
                gwr[i] += g * xr[i];
                gxr[i] += g * wr[i];
            }
        }
    }
    (gx, gw)
}

/// Adds `bias[c]` to every element of channel `c`; `plane` is the per-channel size.
pub fn add_channel_bias<T: Element>(y: &mut [T], bias: &[T], plane: usize) {
    let ch = bias.len();
    for (i, chunk) in y.chunks_mut(plane).enumerate() {
        let b = bias[i % ch];
        for v in chunk {
            *v = *v + b;
        }
    }
}

pub fn channel_bias_grad(gy: &[f64], channels: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; channels];
    for (i, chunk) in gy.chunks(plane).enumerate() {
        gb[i % channels] += chunk.iter().sum::<f64>();
    }
    gb
}

/// Pooling window geometry (no padding).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolDims {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl PoolDims {
    pub fn out_h(&self) -> usize {
        Conv2dDims::out_len(self.in_h, self.kernel, self.stride, 0, 1).unwrap_or(0)
    }

    pub fn out_w(&self) -> usize {
        Conv2dDims::out_len(self.in_w, self.kernel, self.stride, 0, 1).unwrap_or(0)
    }

    pub fn window(&self) -> usize {
        self.kernel * self.kernel
    }

    /// Flat input indices of every window, `window()` entries per output
    /// element, in output order and row-major window order.
    pub fn window_indices(&self, batch: usize) -> Vec<usize> {
        let (oh_n, ow_n) = (self.out_h(), self.out_w());
        let mut idx = Vec::with_capacity(batch * self.channels * oh_n * ow_n * self.window());
        for nc in 0..batch * self.channels {
            let base = nc * self.in_h * self.in_w;
            for oh in 0..oh_n {
                for ow in 0..ow_n {
                    for kh in 0..self.kernel {
                        for kw in 0..self.kernel {
                            let ih = oh * self.stride + kh;
                            let iw = ow * self.stride + kw;
                            idx.push(base + ih * self.in_w + iw);
                        }
                    }
                }
            }
        }
        idx
    }
}

/// Max pooling; returns the pooled values and the flat input index chosen in
/// each window (first maximum in row-major window order).
pub fn maxpool(x: &[f64], batch: usize, d: &PoolDims) -> (Vec<f64>, Vec<usize>) {
    let idx = d.window_indices(batch);
    let win = d.window();
    let mut y = Vec::with_capacity(idx.len() / win);
    let mut arg = Vec::with_capacity(idx.len() / win);
    for w in idx.chunks(win) {
        let mut best = w[0];
        for &i in &w[1..] {
            if x[i] > x[best] {
                best = i;
            }
        }
        y.push(x[best]);
        arg.push(best);
    }
    (y, arg)
}

pub fn maxpool_backward(in_len: usize, argmax: &[usize], gy: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; in_len];
    for (&i, &g) in argmax.iter().zip(gy) {
        gx[i] += g;
    }
    gx
}

/// Sum over each pooling window.
pub fn window_sum<T: Element>(x: &[T], batch: usize, d: &PoolDims) -> Vec<T> {
    let idx = d.window_indices(batch);
    idx.chunks(d.window())
        .map(|w| w.iter().fold(T::default(), |acc, &i| acc + x[i]))
        .collect()
}

pub fn avgpool(x: &[f64], batch: usize, d: &PoolDims) -> Vec<f64> {
    let inv = 1.0 / d.window() as f64;
    window_sum(x, batch, d)
        .into_iter()
        .map(|v| v * inv)
        .collect()
}

pub fn avgpool_backward(in_len: usize, batch: usize, d: &PoolDims, gy: &[f64]) -> Vec<f64> {
    let idx = d.window_indices(batch);
    let inv = 1.0 / d.window() as f64;
    let mut gx = vec![0.0; in_len];
    for (w, &g) in idx.chunks(d.window()).zip(gy) {
        for &i in w {
            gx[i] += g * inv;
        }
    }
    gx
}

pub fn upsample_nearest(
    x: &[f64],
    planes: usize,
    in_h: usize,
    in_w: usize,
    factor: usize,
) -> Vec<f64> {
    let (oh_n, ow_n) = (in_h * factor, in_w * factor);
    let mut y = Vec::with_capacity(planes * oh_n * ow_n);
    for p in 0..planes {
        let base = p * in_h * in_w;
        for oh in 0..oh_n {
            let row = base + (oh / factor) * in_w;
            for ow in 0..ow_n {
                y.push(x[row + ow / factor]);
            }
        }
    }
    y
}

pub fn upsample_nearest_backward(
    gy: &[f64],
    planes: usize,
    in_h: usize,
    in_w: usize,
    factor: usize,
) -> Vec<f64> {
    let (oh_n, ow_n) = (in_h * factor, in_w * factor);
    let mut gx = vec![0.0; planes * in_h * in_w];
    for p in 0..planes {
        let base = p * in_h * in_w;
        for oh in 0..oh_n {
            for ow in 0..ow_n {
                gx[base + (oh / factor) * in_w + ow / factor] += gy[(p * oh_n + oh) * ow_n + ow];
            }
        }
    }
    gx
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn relu_backward(x: &[f64], gy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(gy)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

/// Row-wise softmax cross-entropy, averaged over the batch.
/// Returns `(loss, d loss / d logits)`.
pub fn softmax_cross_entropy(
    logits: &[f64],
    classes: usize,
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let batch = labels.len();
    if logits.len() != batch * classes {
        return Err(Error::shape(
            "softmax_cross_entropy",
            &[batch, classes],
            &[logits.len()],
        ));
    }
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (n, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} >= {classes} classes"
            )));
        }
        let row = &logits[n * classes..(n + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() + max - row[label];
        for c in 0..classes {
            let p = exps[c] / z;
            grad[n * classes + c] = (p - if c == label { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    Ok((loss / batch as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_output_ranges_cover_naive_bounds() {
        for pad in 0..3 {
            for stride in 1..3 {
                for off in 0..5 {
                    let in_len = 7;
                    let Some(out_len) = Conv2dDims::out_len(in_len, 3, stride, pad, 2) else {
                        continue;
                    };
                    let (lo, hi) = valid_outputs(off, pad, stride, in_len, out_len);
                    for o in 0..out_len {
                        let pos = (o * stride + off) as isize - pad as isize;
                        let inside = pos >= 0 && (pos as usize) < in_len;
                        assert_eq!(
                            inside,
                            o >= lo && o < hi,
                            "pad={pad} stride={stride} off={off} o={o}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn ring_conv_wraps() {
        let d = Conv2dDims {
            in_channels: 1,
            out_channels: 1,
            kernel: 1,
            stride: 1,
            padding: 0,
            dilation: 1,
            in_h: 1,
            in_w: 2,
        };
        let x = [Wrapping(u64::MAX), Wrapping(2)];
        let w = [Wrapping(2u64)];
        let y = conv2d(&x, 1, &w, &d);
        assert_eq!(y, vec![Wrapping(u64::MAX - 1), Wrapping(4)]);
    }

    #[test]
    fn softmax_grad_rows_sum_to_zero() {
        let (loss, g) = softmax_cross_entropy(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0], 3, &[2, 0]).unwrap();
        assert!(loss > 0.0);
        assert!((g[0] + g[1] + g[2]).abs() < 1e-15);
        assert!((g[3] + g[4] + g[5]).abs() < 1e-15);
    }
}
