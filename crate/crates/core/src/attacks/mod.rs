//! Input-recovery attacks on an intermediate activation: MLA (optimize the
//! input), EINA (train an inversion model end to end) and DINA (inversion
//! model with per-sub-block distillation).

mod inversion;
mod mla;
mod partition;

pub use inversion::{
    train_inversion, InvOp, InverseBlock, InversionMode, InversionModelSpec, InversionNetwork,
    Recorded, TrainedInversion,
};
pub use mla::{mla_attack, MlaOutcome};
pub use partition::{partition_subblocks, SubBlock};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{json_hash, sha256_hex, write_atomic, write_json, SCHEMA_VERSION};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{add_uniform_noise, ssim_batch, SsimConfig};
use crate::model::{network_hash, EvalPoint, Network};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Mla,
    Eina,
    Dina,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Mla, AttackKind::Eina, AttackKind::Dina];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Mla => "mla",
            AttackKind::Eina => "eina",
            AttackKind::Dina => "dina",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mla" => Ok(AttackKind::Mla),
            "eina" => Ok(AttackKind::Eina),
            "dina" => Ok(AttackKind::Dina),
            _ => Err(Error::InvalidArgument(format!(
                "unknown attack {s:?}; expected mla, eina or dina"
            ))),
        }
    }
}

/// Distillation weights `[a_0, ..., a_n]`: 1, 3, then doubling.
pub fn dina_coefficients(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(3.0);
    }
    for j in 2..=n {
        out.push(2.0 * out[j - 1]);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientSchedule {
    Doubling,
    /// Explicit weights; must cover every seam plus the image term.
    Custom {
        values: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd { momentum: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// MLA gradient steps.
    pub iterations: usize,
    /// Step size for MLA and for inversion training.
    pub lr: f64,
    /// Optimizer for the inversion model.
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub coefficients: CoefficientSchedule,
    /// Noise magnitude on the attacked activation, for training and attack.
    pub lambda: f64,
    pub seed: u64,
    pub ssim: SsimConfig,
    pub sigma: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            iterations: 10_000,
            lr: 0.001,
            optimizer: Optimizer::Adam,
            epochs: 30,
            batch_size: 32,
            coefficients: CoefficientSchedule::Doubling,
            lambda: 0.0,
            seed: 0,
            ssim: SsimConfig::default(),
            sigma: 0.3,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return bad("attack iterations must be > 0".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("attack lr must be > 0, got {}", self.lr));
        }
        if let Optimizer::Sgd { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return bad(format!("attack momentum must be in [0, 1), got {momentum}"));
            }
        }
        if self.batch_size == 0 {
            return bad("attack batch_size must be > 0".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("attack lambda must be >= 0, got {}", self.lambda));
        }
        if let CoefficientSchedule::Custom { values } = &self.coefficients {
            if values.is_empty()
                || values.windows(2).any(|w| w[1] <= w[0])
                || values.iter().any(|v| !(*v > 0.0))
            {
                return bad(format!(
                    "coefficients must be positive and strictly increasing, got {values:?}"
                ));
            }
        }
        self.ssim.validate()
    }

    /// Weights for `n` distillation points.
    pub fn coefficients(&self, n: usize) -> Result<Vec<f64>> {
        match &self.coefficients {
            CoefficientSchedule::Doubling => Ok(dina_coefficients(n)),
            CoefficientSchedule::Custom { values } if values.len() > n => Ok(values[..=n].to_vec()),
            CoefficientSchedule::Custom { values } => Err(Error::Config(format!(
                "{} coefficients given but {} distillation points need {}",
                values.len(),
                n,
                n + 1
            ))),
        }
    }
}

/// `||x - x_hat||^2`.
pub fn eina_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape("reconstruction", x.shape(), x_hat.shape()));
    }
    Ok(x.sub(x_hat)?.sq_norm())
}

/// `a_0 ||x - x_hat||^2 + sum_j a_j ||D_j - I_j||^2` with `pairs[j - 1] = (D_j, I_j)`.
pub fn dina_loss(
    x: &Tensor,
    x_hat: &Tensor,
    pairs: &[(Tensor, Tensor)],
    coefficients: &[f64],
) -> Result<f64> {
    if coefficients.len() != pairs.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} distillation pairs need {} coefficients, got {}",
            pairs.len(),
            pairs.len() + 1,
            coefficients.len()
        )));
    }
    let mut loss = coefficients[0] * eina_loss(x, x_hat)?;
    for (j, (d, i)) in pairs.iter().enumerate() {
        if d.shape() != i.shape() {
            return Err(Error::shape(
                &format!("distillation pair {}", j + 1),
                d.shape(),
                i.shape(),
            ));
        }
        loss += coefficients[j + 1] * d.sub(i)?.sq_norm();
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_image_ssim: Vec<f64>,
    pub avg_ssim: f64,
    pub sigma: f64,
    /// The recovery counts as successful when `avg_ssim >= sigma`.
    pub succeeded: bool,
}

pub fn evaluate_attack(
    recoveries: &Tensor,
    originals: &Tensor,
    sigma: f64,
    ssim: &SsimConfig,
) -> Result<Evaluation> {
    if originals.is_empty() || originals.batch() == 0 {
        return Err(Error::InvalidArgument(
            "cannot evaluate an attack on an empty image set".into(),
        ));
    }
    if recoveries.shape() != originals.shape() {
        return Err(Error::shape(
            "recovered images",
            originals.shape(),
            recoveries.shape(),
        ));
    }
    let per_image_ssim = ssim_batch(recoveries, originals, ssim)?;
    let avg_ssim = per_image_ssim.iter().sum::<f64>() / per_image_ssim.len() as f64;
    Ok(Evaluation {
        per_image_ssim,
        avg_ssim,
        sigma,
        succeeded: avg_ssim >= sigma,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub schema: u32,
    pub kind: AttackKind,
    pub target: EvalPoint,
    pub per_image_ssim: Vec<f64>,
    pub avg_ssim: f64,
    pub sigma: f64,
    pub succeeded: bool,
    pub config: AttackConfig,
}

impl AttackReport {
    pub fn new(
        kind: AttackKind,
        target: EvalPoint,
        config: &AttackConfig,
        eval: Evaluation,
    ) -> Self {
        AttackReport {
            schema: SCHEMA_VERSION,
            kind,
            target,
            per_image_ssim: eval.per_image_ssim,
            avg_ssim: eval.avg_ssim,
            sigma: eval.sigma,
            succeeded: eval.succeeded,
            config: config.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub report: AttackReport,
    /// Recovered images, clamped to `[0, 1]`.
    pub recovered: Tensor,
    /// MLA objective per step, or inversion training loss per epoch.
    pub trace: Vec<f64>,
}

/// Inversion models stored on disk, one per (model, point, attack setup).
#[derive(Clone, Debug)]
pub struct AttackCache {
    pub dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CachedInversion {
    schema: u32,
    network: InversionNetwork,
    epoch_losses: Vec<f64>,
}

impl AttackCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        AttackCache { dir: dir.into() }
    }

    pub fn path(&self, model_hash: &str, point: EvalPoint, config_hash: &str) -> PathBuf {
        self.dir.join(format!(
            "{}-{point}-{}.json",
            &model_hash[..16.min(model_hash.len())],
            &config_hash[..16.min(config_hash.len())]
        ))
    }

    pub fn load(
        &self,
        model_hash: &str,
        point: EvalPoint,
        config_hash: &str,
    ) -> Result<Option<TrainedInversion>> {
        let p = self.path(model_hash, point, config_hash);
        if !p.exists() {
            return Ok(None);
        }
        let c: CachedInversion = serde_json::from_slice(&fs::read(&p)?)?;
        Ok(Some(TrainedInversion {
            network: c.network,
            epoch_losses: c.epoch_losses,
        }))
    }

    pub fn store(
        &self,
        model_hash: &str,
        point: EvalPoint,
        config_hash: &str,
        t: &TrainedInversion,
    ) -> Result<()> {
        let c = CachedInversion {
            schema: SCHEMA_VERSION,
            network: t.network.clone(),
            epoch_losses: t.epoch_losses.clone(),
        };
        write_atomic(
            &self.path(model_hash, point, config_hash),
            &serde_json::to_vec(&c)?,
        )
    }
}

/// Identifies an inversion-training setup: mode, config and the exact
/// attacker data.
pub fn inversion_config_hash(
    mode: InversionMode,
    config: &AttackConfig,
    data: &Dataset,
) -> Result<String> {
    let mut bytes = Vec::with_capacity(data.images.len() * 8);
    for v in data.images.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    json_hash(&(mode, config, sha256_hex(&bytes), data.images.shape()))
}

fn trained_inversion(
    network: &Network,
    point: EvalPoint,
    attacker: &Dataset,
    config: &AttackConfig,
    mode: InversionMode,
    cache: Option<&AttackCache>,
) -> Result<TrainedInversion> {
    let Some(cache) = cache else {
        return train_inversion(network, point, attacker, config, mode);
    };
    let mh = network_hash(network)?;
    let ch = inversion_config_hash(mode, config, attacker)?;
    if let Some(t) = cache.load(&mh, point, &ch)? {
        return Ok(t);
    }
    let t = train_inversion(network, point, attacker, config, mode)?;
    cache.store(&mh, point, &ch, &t)?;
    Ok(t)
}

/// Runs one attack at `point` against `victims`. The server sees the
/// victims' activation with `config.lambda` noise; inversion attacks first
/// train on `attacker`, the server's own data.
pub fn run_attack(
    kind: AttackKind,
    network: &Network,
    point: EvalPoint,
    attacker: &Dataset,
    victims: &Tensor,
    config: &AttackConfig,
    cache: Option<&AttackCache>,
) -> Result<AttackOutcome> {
    config.validate()?;
    if victims.is_empty() {
        return Err(Error::InvalidArgument("no victim images to attack".into()));
    }
    let clean = network.forward_prefix(victims, point)?;
    let observed = add_uniform_noise(
        &clean,
        config.lambda,
        &mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x7669_6374),
    );
    let (recovered, trace) = match kind {
        AttackKind::Mla => {
            let out = mla_attack(network, point, &observed, config)?;
            (out.recovered, out.objective)
        }
        AttackKind::Eina | AttackKind::Dina => {
            let mode = if kind == AttackKind::Eina {
                InversionMode::Eina
            } else {
                InversionMode::Dina
            };
            let t = trained_inversion(network, point, attacker, config, mode, cache)?;
            (
                t.network.forward(&observed)?.clamp(0.0, 1.0),
                t.epoch_losses,
            )
        }
    };
    let eval = evaluate_attack(&recovered, victims, config.sigma, &config.ssim)?;
    Ok(AttackOutcome {
        report: AttackReport::new(kind, point, config, eval),
        recovered,
        trace,
    })
}

#[derive(Serialize)]
struct ImageSidecar<'a> {
    schema: u32,
    dtype: &'a str,
    shape: &'a [usize],
    data_file: String,
}

/// Writes `stem.f64` (little-endian doubles) and `stem.json` (shape).
pub fn dump_images(stem: &Path, images: &Tensor) -> Result<(PathBuf, PathBuf)> {
    let bin = with_suffix(stem, "f64");
    let meta = with_suffix(stem, "json");
    let mut bytes = Vec::with_capacity(images.len() * 8);
    for v in images.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&bin, &bytes)?;
    let data_file = bin
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    write_json(
        &meta,
        &ImageSidecar {
            schema: SCHEMA_VERSION,
            dtype: "f64le",
            shape: images.shape(),
            data_file,
        },
    )?;
    Ok((bin, meta))
}

/// Appends `.ext` without touching dots already in the stem (`mla-1.5`).
fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Reads back a dump written by [`dump_images`].
pub fn load_images(stem: &Path) -> Result<Tensor> {
    #[derive(Deserialize)]
    struct Sidecar {
        shape: Vec<usize>,
    }
    let side: Sidecar = serde_json::from_slice(&fs::read(with_suffix(stem, "json"))?)?;
    let bytes = fs::read(with_suffix(stem, "f64"))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "image dump has {} bytes, not a multiple of 8",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(side.shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_schedule() {
        assert_eq!(dina_coefficients(0), vec![1.0]);
        assert_eq!(dina_coefficients(1), vec![1.0, 3.0]);
        assert_eq!(dina_coefficients(4), vec![1.0, 3.0, 6.0, 12.0, 24.0]);
    }

    #[test]
    fn dina_loss_arithmetic() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let xh = Tensor::new(vec![1, 2], vec![0.0, 2.0]).unwrap();
        let d = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let i = Tensor::new(vec![1, 1], vec![1.0 + 5f64.sqrt() + 2.0 - 2.0]).unwrap();
        let l = dina_loss(&x, &xh, &[(d.clone(), i)], &[1.0, 3.0]).unwrap();
        assert!((l - (2.0 + 3.0 * (2.0 - 5f64.sqrt()).powi(2))).abs() < 1e-12);
        assert_eq!(
            dina_loss(&x, &x, &[(d.clone(), d.clone())], &[1.0, 3.0]).unwrap(),
            0.0
        );
        let err = dina_loss(&x, &xh, &[(d, Tensor::zeros(&[1, 2]))], &[1.0, 3.0]).unwrap_err();
        assert!(err.to_string().contains("distillation pair 1"), "{err}");
    }

    #[test]
    fn empty_evaluation_is_an_error() {
        let e = Tensor::zeros(&[0, 1, 4, 4]);
        assert!(evaluate_attack(&e, &e, 0.3, &SsimConfig::default()).is_err());
    }

    #[test]
    fn custom_coefficients_must_increase() {
        let mut c = AttackConfig {
            coefficients: CoefficientSchedule::Custom {
                values: vec![1.0, 1.0],
            },
            ..AttackConfig::default()
        };
        assert!(c.validate().is_err());
        c.coefficients = CoefficientSchedule::Custom {
            values: vec![1.0, 2.0],
        };
        assert!(c.coefficients(2).is_err());
        assert_eq!(c.coefficients(1).unwrap(), vec![1.0, 2.0]);
    }
}
