//! Run configuration.
//!
//! A TOML document with three optional tables. Unknown keys are rejected. Every
//! field has a default; optimizer defaults follow the usual CIFAR-scale setup
//! (SGD 0.1 / momentum 0.9 for weights, Adam 6e-3 for probabilities, batch 256).
//!
//! ```toml
//! seed = 0
//!
//! [model]
//! arch = "mlp"
//! sizes = [784, 32, 10]
//!
//! [dataset]
//! source = "mnist"
//! dir = "data/mnist"
//! train_size = 2000
//!
//! [train]
//! epochs = 40
//! t1 = 5
//! t2 = 25
//! k_final = 0.1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::net::{Layer, NetSpec};
use crate::optim::Constraint;
use crate::schedule::ScheduleParams;
use crate::trainer::{FinalizeMode, TrainConfig, TrainMode};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    pub train: TrainSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Mlp {
        sizes: Vec<usize>,
    },
    Conv4 {
        #[serde(default = "default_conv_input")]
        input: [usize; 3],
        #[serde(default = "default_conv_channels")]
        channels: [usize; 2],
        #[serde(default = "default_conv_hidden")]
        hidden: usize,
        #[serde(default = "default_classes")]
        classes: usize,
    },
    Custom {
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
    },
}

fn default_conv_input() -> [usize; 3] {
    [1, 28, 28]
}

fn default_conv_channels() -> [usize; 2] {
    [8, 16]
}

fn default_conv_hidden() -> usize {
    64
}

fn default_classes() -> usize {
    10
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Mlp {
            sizes: vec![784, 300, 100, 10],
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<NetSpec> {
        match self {
            ModelConfig::Mlp { sizes } => NetSpec::mlp(sizes),
            ModelConfig::Conv4 {
                input,
                channels,
                hidden,
                classes,
            } => NetSpec::conv4(*input, *channels, *hidden, *classes),
            ModelConfig::Custom { input_shape, layers } => NetSpec::new(input_shape.clone(), layers.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// MNIST-layout directory with `train-*` and optionally `t10k-*` IDX files.
    Mnist {
        #[serde(default = "default_mnist_dir")]
        dir: PathBuf,
        /// Training samples kept after a seeded shuffle; 0 keeps all.
        #[serde(default = "default_train_size")]
        train_size: usize,
        /// Held-out samples evaluated; 0 keeps all.
        #[serde(default)]
        eval_size: usize,
        #[serde(default)]
        subset_seed: u64,
    },
    /// Gaussian blobs; the held-out split comes from the same centers.
    Blobs {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_blobs_n")]
        n_per_class: usize,
        #[serde(default = "default_blobs_eval")]
        eval_per_class: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        /// Defaults to the network input size.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
        #[serde(default = "default_blobs_spread")]
        spread: f64,
    },
}

fn default_mnist_dir() -> PathBuf {
    PathBuf::from("data/mnist")
}

fn default_train_size() -> usize {
    2000
}

fn default_blobs_n() -> usize {
    100
}

fn default_blobs_eval() -> usize {
    50
}

fn default_blobs_spread() -> f64 {
    0.3
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Mnist {
            dir: default_mnist_dir(),
            train_size: default_train_size(),
            eval_size: 0,
            subset_seed: 0,
        }
    }
}

impl DatasetConfig {
    /// Parses `mnist:<dir>` or `blobs:<seed>`; other fields keep their defaults
    /// (or the values of `base` when it has the same source).
    pub fn from_flag(flag: &str, base: &DatasetConfig) -> Result<Self> {
        let (kind, arg) = flag
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("dataset flag {flag:?} must be mnist:<dir> or blobs:<seed>")))?;
        match (kind, base.clone()) {
            ("mnist", DatasetConfig::Mnist {
                train_size,
                eval_size,
                subset_seed,
                ..
            }) => Ok(DatasetConfig::Mnist {
                dir: PathBuf::from(arg),
                train_size,
                eval_size,
                subset_seed,
            }),
            ("mnist", _) => Ok(DatasetConfig::Mnist {
                dir: PathBuf::from(arg),
                train_size: default_train_size(),
                eval_size: 0,
                subset_seed: 0,
            }),
            ("blobs", base) => {
                let seed = arg
                    .parse()
                    .map_err(|_| Error::Config(format!("blobs seed {arg:?} is not an integer")))?;
                Ok(match base {
                    DatasetConfig::Blobs {
                        n_per_class,
                        eval_per_class,
                        classes,
                        dim,
                        spread,
                        ..
                    } => DatasetConfig::Blobs {
                        seed,
                        n_per_class,
                        eval_per_class,
                        classes,
                        dim,
                        spread,
                    },
                    _ => DatasetConfig::Blobs {
                        seed,
                        n_per_class: default_blobs_n(),
                        eval_per_class: default_blobs_eval(),
                        classes: default_classes(),
                        dim: None,
                        spread: default_blobs_spread(),
                    },
                })
            }
            (other, _) => Err(Error::Config(format!("unknown dataset kind {other:?}"))),
        }
    }

    /// Loads `(train, eval)`. Relative directories resolve against `base_dir`.
    pub fn load(&self, spec: &NetSpec, base_dir: &Path) -> Result<(Dataset, Option<Dataset>)> {
        match self {
            DatasetConfig::Mnist {
                dir,
                train_size,
                eval_size,
                subset_seed,
            } => {
                let dir = if dir.is_absolute() { dir.clone() } else { base_dir.join(dir) };
                let (train, test) = data::load_mnist_dir(&dir)?;
                let train = if *train_size > 0 {
                    train.subset(*train_size, *subset_seed)?
                } else {
                    train
                };
                let test = match test {
                    Some(t) if *eval_size > 0 => Some(t.subset(*eval_size, *subset_seed)?),
                    other => other,
                };
                Ok((train, test))
            }
            DatasetConfig::Blobs {
                seed,
                n_per_class,
                eval_per_class,
                classes,
                dim,
                spread,
            } => {
                let dim = dim.unwrap_or_else(|| spec.input_len());
                let all = data::synth_blobs(*seed, n_per_class + eval_per_class, *classes, dim, *spread)?;
                let per = n_per_class + eval_per_class;
                let (mut train_idx, mut eval_idx) = (Vec::new(), Vec::new());
                for c in 0..*classes {
                    train_idx.extend(c * per..c * per + n_per_class);
                    eval_idx.extend(c * per + n_per_class..(c + 1) * per);
                }
                let (x, y) = all.batch(&train_idx)?;
                let train = Dataset::new(x, y, *classes)?;
                let eval = if eval_idx.is_empty() {
                    None
                } else {
                    let (x, y) = all.batch(&eval_idx)?;
                    Some(Dataset::new(x, y, *classes)?)
                };
                Ok((train, eval))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: TrainMode,
    pub constraint: Constraint,
    pub epochs: usize,
    pub t1: usize,
    pub t2: usize,
    pub k_final: f64,
    pub batch_size: usize,
    pub grad_samples: usize,
    pub lr_w: f64,
    pub lr_s: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup: bool,
    pub finalize: FinalizeMode,
    pub eval_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            mode: d.mode,
            constraint: d.constraint,
            epochs: d.schedule.epochs,
            t1: d.schedule.t1,
            t2: d.schedule.t2,
            k_final: d.schedule.k_final,
            batch_size: d.batch_size,
            grad_samples: d.grad_samples,
            lr_w: d.lr_w,
            lr_s: d.lr_s,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            warmup: d.warmup,
            finalize: d.finalize,
            eval_every: d.eval_every,
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.train_config()?.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Fully expanded document, defaults included.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 12 hex digits of SHA-256 over the canonical document.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_name(&self) -> String {
        format!("{}-seed{}", self.hash(), self.seed)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let config = TrainConfig {
            mode: t.mode,
            constraint: t.constraint,
            schedule: ScheduleParams {
                epochs: t.epochs,
                t1: t.t1,
                t2: t.t2,
                k_final: t.k_final,
            },
            batch_size: t.batch_size,
            grad_samples: t.grad_samples,
            seed: self.seed,
            lr_w: t.lr_w,
            lr_s: t.lr_s,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            warmup: t.warmup,
            finalize: t.finalize,
            eval_every: t.eval_every,
        };
        config.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }
}
