use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind};
use crate::boundary::{parse_grid, SearchConfig};
use crate::data::{load_cifar10, synthetic_split, Dataset, Split};
use crate::error::{Error, Result};
use crate::fixed::FixedCfg;
use crate::model::TrainConfig;
use crate::protocol::Transport;
use crate::tensor::SgdConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Cifar10,
}

/// Everything an experiment depends on, as one flat TOML table. Command
/// line flags override individual keys; the hash of the final value is
/// stamped into every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: String,
    pub width: usize,

    pub dataset: DatasetKind,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub classes: usize,
    pub image_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,

    pub sigma: f64,
    pub delta_drop: f64,
    pub lambda: f64,
    pub lambda_grid: String,
    pub noise_after_candidate: bool,
    pub accuracy_trials: usize,

    pub attack: AttackKind,
    pub attack_epochs: usize,
    pub attack_iterations: usize,
    pub attack_lr: f64,
    pub attack_batch_size: usize,
    pub attacker_images: usize,
    pub victim_images: usize,
    pub cache_dir: Option<PathBuf>,

    pub frac_bits: u32,
    pub transport: String,
    pub host: String,
    pub port: u16,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            model: "tiny_vgg8".into(),
            width: 8,
            dataset: DatasetKind::Synthetic,
            train_path: None,
            test_path: None,
            classes: 3,
            image_size: 16,
            train_per_class: 500,
            test_per_class: 100,
            epochs: 20,
            batch_size: 32,
            lr: 0.03,
            momentum: 0.9,
            sigma: 0.3,
            delta_drop: 0.025,
            lambda: 0.1,
            lambda_grid: "0:0.5:0.05".into(),
            noise_after_candidate: false,
            accuracy_trials: 1,
            attack: AttackKind::Dina,
            attack_epochs: 20,
            attack_iterations: 10_000,
            attack_lr: 0.001,
            attack_batch_size: 32,
            attacker_images: 600,
            victim_images: 16,
            cache_dir: None,
            frac_bits: 16,
            transport: "in_proc".into(),
            host: "127.0.0.1".into(),
            port: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return bad(format!("sigma must be in (0, 1], got {}", self.sigma));
        }
        if !(0.0..1.0).contains(&self.delta_drop) {
            return bad(format!(
                "delta_drop must be in [0, 1), got {}",
                self.delta_drop
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.width == 0
            || self.classes == 0
            || self.victim_images == 0
            || self.attacker_images == 0
        {
            return bad(
                "width, classes, victim_images and attacker_images must be positive".into(),
            );
        }
        if self.accuracy_trials == 0 {
            return bad("accuracy_trials must be positive".into());
        }
        if self.dataset == DatasetKind::Cifar10 && self.train_path.is_none() {
            return bad("dataset = \"cifar10\" needs train_path".into());
        }
        parse_grid(&self.lambda_grid)?;
        self.transport()?;
        self.fixed().validate()?;
        self.train_config().sgd.validate()?;
        self.attack_config().validate()
    }

    pub fn fixed(&self) -> FixedCfg {
        FixedCfg {
            frac_bits: self.frac_bits,
        }
    }

    pub fn transport(&self) -> Result<Transport> {
        match self.transport.as_str() {
            "in_proc" | "inproc" => Ok(Transport::InProc),
            "tcp" => Ok(Transport::Tcp {
                host: self.host.clone(),
                port: self.port,
            }),
            t => Err(Error::Config(format!(
                "unknown transport {t:?}; expected in_proc or tcp"
            ))),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            sgd: SgdConfig {
                learning_rate: self.lr,
                momentum: self.momentum,
                seed: self.seed,
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            iterations: self.attack_iterations,
            lr: self.attack_lr,
            epochs: self.attack_epochs,
            batch_size: self.attack_batch_size,
            lambda: self.lambda,
            seed: self.seed,
            sigma: self.sigma,
            ..AttackConfig::default()
        }
    }

    pub fn search_config(&self, baseline_accuracy: f64) -> SearchConfig {
        SearchConfig {
            sigma: self.sigma,
            delta: (baseline_accuracy - self.delta_drop).max(f64::MIN_POSITIVE),
            lambda: self.lambda,
            noise_after_candidate: self.noise_after_candidate,
        }
    }

    /// Train and test splits.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        match self.dataset {
            DatasetKind::Synthetic => synthetic_split(
                self.seed,
                self.classes,
                self.image_size,
                self.train_per_class,
                self.test_per_class,
            ),
            DatasetKind::Cifar10 => {
                let train =
                    load_cifar10(self.train_path.as_ref().expect("validated"), Split::Train)?;
                let test = match &self.test_path {
                    Some(p) => load_cifar10(p, Split::Test)?,
                    None => train.clone(),
                };
                Ok((train, test))
            }
        }
    }

    pub fn dataset_name(&self) -> String {
        match self.dataset {
            DatasetKind::Synthetic => format!(
                "synthetic-{}x{}-{}c",
                self.image_size, self.image_size, self.classes
            ),
            DatasetKind::Cifar10 => "cifar10".into(),
        }
    }

    pub fn hash(&self) -> Result<String> {
        crate::artifact::json_hash(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_is_lossless() {
        let mut c = ExperimentConfig::default();
        c.lambda = 0.1 + 0.2;
        c.cache_dir = Some("cache".into());
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = ExperimentConfig::from_toml("seed = 9\nmodel = \"simple_cnn\"\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.sigma, 0.3);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        assert!(ExperimentConfig::from_toml("sigmaa = 0.3").is_err());
        assert!(ExperimentConfig::from_toml("sigma = 1.5").is_err());
        assert!(ExperimentConfig::from_toml("transport = \"udp\"").is_err());
        assert!(ExperimentConfig::from_toml("lambda_grid = \"0:1\"").is_err());
    }
}
