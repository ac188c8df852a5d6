//! SSIM, top-1 accuracy and accuracy with noise injected at an evaluation point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{EvalPoint, Network};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0
            || !(self.sigma > 0.0)
            || !(self.k1 > 0.0)
            || !(self.k2 > 0.0)
            || !(self.data_range > 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "invalid SSIM config {self:?}"
            )));
        }
        Ok(())
    }

    /// Normalized 1-D weights for an image of `h x w`: the Gaussian window,
    /// or a uniform one of size `min(h, w)` when the image is smaller.
    pub fn weights(&self, h: usize, w: usize) -> Vec<f64> {
        if h < self.window || w < self.window {
            let n = h.min(w);
            return vec![1.0 / n as f64; n];
        }
        let c = (self.window - 1) as f64 / 2.0;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Separable weighted filter over valid positions of one `h x w` plane.
fn filter(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g
                .iter()
                .enumerate()
                .map(|(k, gk)| gk * plane[y * w + x + k])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g
                .iter()
                .enumerate()
                .map(|(k, gk)| gk * rows[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, cfg: &SsimConfig) -> f64 {
    let g = cfg.weights(h, w);
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (ma, mb) = (filter(a, h, w, &g), filter(b, h, w, &g));
    let (saa, sbb, sab) = (
        filter(&aa, h, w, &g),
        filter(&bb, h, w, &g),
        filter(&ab, h, w, &g),
    );
    let n = ma.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mua, mub) = (ma[i], mb[i]);
        let va = saa[i] - mua * mua;
        let vb = sbb[i] - mub * mub;
        let cov = sab[i] - mua * mub;
        total += ((2.0 * mua * mub + c1) * (2.0 * cov + c2))
            / ((mua * mua + mub * mub + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// SSIM of two images. The last two axes are height and width; all leading
/// axes are treated as channels, each scored separately and then averaged.
pub fn ssim(a: &Tensor, b: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let s = a.shape();
    if s.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "ssim needs an image with height and width, got shape {s:?}"
        )));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let plane = h * w;
    let planes = a.len() / plane;
    let total: f64 = (0..planes)
        .map(|c| {
            let r = c * plane..(c + 1) * plane;
            ssim_plane(&a.data()[r.clone()], &b.data()[r], h, w, cfg)
        })
        .sum();
    Ok(total / planes as f64)
}

/// Per-image SSIM over two `[N, C, H, W]` batches.
pub fn ssim_batch(a: &Tensor, b: &Tensor, cfg: &SsimConfig) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim batch", a.shape(), b.shape()));
    }
    (0..a.batch())
        .into_par_iter()
        .map(|i| ssim(&a.slice_batch(i, i + 1), &b.slice_batch(i, i + 1), cfg))
        .collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predictions(logits: &Tensor) -> Vec<usize> {
    let k = logits.sample_len();
    logits.data().chunks(k).map(argmax).collect()
}

/// Fraction of rows where two sets of logits pick the same class.
pub fn argmax_agreement(a: &Tensor, b: &Tensor) -> f64 {
    let (pa, pb) = (predictions(a), predictions(b));
    pa.iter().zip(&pb).filter(|(x, y)| x == y).count() as f64 / pa.len().max(1) as f64
}

/// Fraction of rows whose argmax equals the label.
pub fn top1_accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty batch".into()));
    }
    if logits.shape().len() != 2 || logits.batch() != labels.len() {
        return Err(Error::shape(
            "logits",
            &[labels.len(), logits.sample_len()],
            logits.shape(),
        ));
    }
    let hits = predictions(logits)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Adds independent uniform `[-lambda, lambda]` noise to every element.
pub fn add_uniform_noise(a: &Tensor, lambda: f64, rng: &mut ChaCha8Rng) -> Tensor {
    if lambda == 0.0 {
        return a.clone();
    }
    let noise = Tensor::uniform(a.shape(), -lambda, lambda, rng);
    a.add(&noise).expect("same shape")
}

/// Mean top-1 accuracy over `trials` draws of prefix to `p`, uniform noise,
/// suffix.
pub fn noised_accuracy(
    network: &Network,
    p: EvalPoint,
    lambda: f64,
    data: &Dataset,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument(
            "noised accuracy needs at least one trial".into(),
        ));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise magnitude must be finite and >= 0, got {lambda}"
        )));
    }
    let clean = network.forward_prefix(&data.images, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        let noised = add_uniform_noise(&clean, lambda, &mut rng);
        total += top1_accuracy(&network.forward_suffix(&noised, p)?, &data.labels)?;
    }
    Ok(total / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn window_sums_to_one() {
        let cfg = SsimConfig::default();
        let g = cfg.weights(16, 16);
        assert_eq!(g.len(), 11);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(cfg.weights(8, 9).len(), 8);
    }

    #[test]
    fn identical_images_score_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        assert_eq!(ssim(&x, &x, &SsimConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn constant_images_closed_form() {
        let a = Tensor::zeros(&[1, 16, 16]);
        let b = Tensor::full(&[1, 16, 16], 1.0);
        let c1 = 1e-4;
        let s = ssim(&a, &b, &SsimConfig::default()).unwrap();
        assert!((s - c1 / (1.0 + c1)).abs() < 1e-12, "{s}");
    }

    #[test]
    fn shape_mismatch() {
        assert!(ssim(
            &Tensor::zeros(&[1, 16, 16]),
            &Tensor::zeros(&[1, 16, 15]),
            &SsimConfig::default()
        )
        .is_err());
    }

    #[test]
    fn tie_goes_to_lowest_class() {
        let logits = Tensor::zeros(&[10, 10]);
        let labels: Vec<usize> = (0..10).collect();
        assert_eq!(top1_accuracy(&logits, &labels).unwrap(), 0.1);
        assert!(top1_accuracy(&Tensor::zeros(&[1, 3]), &[]).is_err());
    }

    #[test]
    fn random_logits_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = Tensor::uniform(&[10_000, 10], -1.0, 1.0, &mut rng);
        let labels: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..10)).collect();
        let acc = top1_accuracy(&logits, &labels).unwrap();
        assert!((0.08..=0.12).contains(&acc), "{acc}");
    }
}
