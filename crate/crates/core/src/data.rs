//! Labelled image sets: CIFAR binary files and a seeded synthetic stand-in.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CIFAR_SIDE: usize = 32;
const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR10_RECORD: usize = 1 + CIFAR_PIXELS;
pub const CIFAR100_RECORD: usize = 2 + CIFAR_PIXELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Cifar10Binary,
    Cifar100Binary,
    Synthetic {
        seed: u64,
        classes: usize,
        size: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, C, H, W]` with values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
        provenance: Provenance,
    ) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Dataset(format!(
                "images must be [N, C, H, W], got {:?}",
                images.shape()
            )));
        }
        if images.batch() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Dataset(format!(
                "label {l} at index {i} >= {num_classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            split,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// The first `n` examples (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images.slice_batch(0, n),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_batch(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            ..self.clone()
        }
    }
}

fn parse_cifar(
    bytes: &[u8],
    record: usize,
    label_offset: usize,
    classes: usize,
    provenance: Provenance,
    split: Split,
) -> Result<Dataset> {
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::Dataset(format!(
            "file size {} bytes is not a positive multiple of the {record}-byte record",
            bytes.len()
        )));
    }
    let n = bytes.len() / record;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[label_offset] as usize;
        if label >= classes {
            return Err(Error::Dataset(format!(
                "record {i}: label {label} >= {classes}"
            )));
        }
        labels.push(label);
        pixels.extend(
            rec[record - CIFAR_PIXELS..]
                .iter()
                .map(|&b| b as f64 / 255.0),
        );
    }
    let images = Tensor::new(vec![n, 3, CIFAR_SIDE, CIFAR_SIDE], pixels)?;
    Dataset::new(images, labels, classes, split, provenance)
}

/// CIFAR-10 binary batch: records of 1 label byte + 1024 R + 1024 G + 1024 B.
pub fn load_cifar10(path: &Path, split: Split) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    parse_cifar10(&bytes, split)
}

pub fn parse_cifar10(bytes: &[u8], split: Split) -> Result<Dataset> {
    parse_cifar(
        bytes,
        CIFAR10_RECORD,
        0,
        10,
        Provenance::Cifar10Binary,
        split,
    )
}

/// CIFAR-100 binary batch: coarse label byte, fine label byte, then pixels.
/// Uses the 100 fine labels.
pub fn load_cifar100(path: &Path, split: Split) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    parse_cifar(
        &bytes,
        CIFAR100_RECORD,
        1,
        100,
        Provenance::Cifar100Binary,
        split,
    )
}

/// Class-conditioned textures: a per-class oriented grating and colour tint
/// carry the label; each sample adds seeded Gaussian blobs, a random phase
/// and pixel noise. RGB, `size x size`, values in `[0, 1]`. Examples are
/// interleaved by class.
pub fn gen_synthetic(
    seed: u64,
    classes: usize,
    size: usize,
    n_per_class: usize,
) -> Result<Dataset> {
    if size < 8 {
        return Err(Error::Dataset(format!(
            "synthetic image size must be >= 8, got {size}"
        )));
    }
    if classes == 0 {
        return Err(Error::Dataset(
            "synthetic dataset needs at least one class".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = classes * n_per_class;
    let plane = size * size;
    let mut pixels = Vec::with_capacity(n * 3 * plane);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        labels.push(class);
        pixels.extend(synthetic_image(class, classes, size, &mut rng));
    }
    let images = Tensor::new(vec![n, 3, size, size], pixels)?;
    Dataset::new(
        images,
        labels,
        classes,
        Split::Train,
        Provenance::Synthetic {
            seed,
            classes,
            size,
        },
    )
}

/// Train and test sets from independent seeds.
pub fn synthetic_split(
    seed: u64,
    classes: usize,
    size: usize,
    train_per_class: usize,
    test_per_class: usize,
) -> Result<(Dataset, Dataset)> {
    let train = gen_synthetic(seed, classes, size, train_per_class)?;
    let mut test = gen_synthetic(seed ^ 0x5eed_7e57, classes, size, test_per_class)?;
    test.split = Split::Test;
    Ok((train, test))
}

fn synthetic_image<R: Rng>(class: usize, classes: usize, size: usize, rng: &mut R) -> Vec<f64> {
    let s = size as f64;
    let angle = PI * class as f64 / classes as f64;
    let freq = 2.0 + (class % 3) as f64;
    let (ca, sa) = (angle.cos(), angle.sin());
    let tint = [
        0.5 + 0.5 * (2.0 * PI * class as f64 / classes as f64).cos(),
        0.5 + 0.5 * (2.0 * PI * class as f64 / classes as f64 + 2.0).cos(),
        0.5 + 0.5 * (2.0 * PI * class as f64 / classes as f64 + 4.0).cos(),
    ];
    let phase = rng.gen_range(0.0..2.0 * PI);
    let background = rng.gen_range(0.35..0.55);
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.gen_range(1..=3))
        .map(|_| {
            (
                rng.gen_range(0.0..s),
                rng.gen_range(0.0..s),
                rng.gen_range(0.08..0.25) * s,
                [
                    rng.gen_range(-0.4..0.4),
                    rng.gen_range(-0.4..0.4),
                    rng.gen_range(-0.4..0.4),
                ],
            )
        })
        .collect();
    let mut out = vec![0.0; 3 * size * size];
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64 / s, y as f64 / s);
                let grating = (2.0 * PI * freq * (fx * ca + fy * sa) + phase).sin();
                let mut v = background + 0.22 * grating * (0.4 + tint[c]);
                for (bx, by, r, col) in &blobs {
                    let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                    v += col[c] * (-d2 / (2.0 * r * r)).exp();
                }
                v += rng.gen_range(-0.03..0.03);
                out[(c * size + y) * size + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cifar_two_records() {
        let mut bytes = vec![0u8; 2 * CIFAR10_RECORD];
        bytes[0] = 3;
        bytes[1] = 255;
        bytes[CIFAR10_RECORD] = 9;
        let d = parse_cifar10(&bytes, Split::Test).unwrap();
        assert_eq!(d.images.shape(), &[2, 3, 32, 32]);
        assert_eq!(d.labels, vec![3, 9]);
        assert_eq!(d.images.data()[0], 1.0);
        assert_eq!(d.images.data()[1], 0.0);
    }

    #[test]
    fn cifar_size_and_label_errors() {
        let err = parse_cifar10(&vec![0u8; 3072], Split::Train)
            .unwrap_err()
            .to_string();
        assert!(err.contains("3072"), "{err}");
        let mut bytes = vec![0u8; 2 * CIFAR10_RECORD];
        bytes[CIFAR10_RECORD] = 10;
        let err = parse_cifar10(&bytes, Split::Train).unwrap_err().to_string();
        assert!(err.contains("record 1"), "{err}");
    }

    #[test]
    fn synthetic_is_deterministic_and_class_distinct() {
        let a = gen_synthetic(4, 3, 16, 20).unwrap();
        let b = gen_synthetic(4, 3, 16, 20).unwrap();
        assert_eq!(a, b);
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let per = a.images.sample_len();
        let mut means = vec![vec![0.0; per]; 3];
        for (i, &l) in a.labels.iter().enumerate() {
            for (m, v) in means[l]
                .iter_mut()
                .zip(&a.images.data()[i * per..(i + 1) * per])
            {
                *m += v / 20.0;
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                let d: f64 = means[i]
                    .iter()
                    .zip(&means[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                assert!(d > 0.0);
            }
        }
        assert!(gen_synthetic(4, 3, 7, 1).is_err());
    }
}
