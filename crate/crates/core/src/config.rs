//! Run configuration, read from TOML.
//!
//! Every section is optional and falls back to the defaults below. Unknown
//! keys are rejected.
//!
//! ```toml
//! seed = 0
//!
//! [network]
//! n_hidden = 120
//! dims = 2            # 0, 1, 2, ... or "inf"
//! dt = 0.1
//! n_steps = 300
//!
//! [loss]
//! beta = 1.0
//! margin = 1.0
//!
//! [train]
//! epochs = 300
//! batch_size = 150
//! lr = 1e-3
//!
//! [data]
//! source = "yin_yang"
//!
//! [sparsity]
//! mode = "dynamic"
//! sp = 0.5
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkConfig, Topology};
use crate::objectives::{Objective, TtfsLoss};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate.
    pub lr: f64,
    pub warmup_steps: usize,
    /// Step at which the cosine decay reaches its floor.
    pub decay_steps: usize,
    /// Floor of the schedule as a fraction of the peak.
    pub final_lr_fraction: f64,
    pub adam: AdamConfig,
    /// Restart once with half the learning rate when training diverges.
    pub retry_on_divergence: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 150,
            lr: 1e-3,
            warmup_steps: 500,
            decay_steps: 10_000,
            final_lr_fraction: 0.1,
            adam: AdamConfig::default(),
            retry_on_divergence: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    YinYang,
    SpikeFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub train_size: usize,
    pub test_size: usize,
    /// Yin-Yang input window (ms).
    pub window: f64,
    pub train_seed: u64,
    pub test_seed: u64,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::YinYang,
            train_size: 5000,
            test_size: 1000,
            window: 10.0,
            train_seed: 42,
            test_seed: 43,
            train_path: None,
            test_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityMode {
    #[default]
    None,
    /// Prune after every epoch; pruned weights may regrow.
    Dynamic,
    /// Prune once after training.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparsityPolicy {
    pub mode: SparsityMode,
    /// Fraction of synaptic weights to zero.
    pub sp: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub loss: TtfsLoss,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub sparsity: SparsityPolicy,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.validate()?;
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", t.lr)));
        }
        if !(0.0..=1.0).contains(&t.final_lr_fraction) {
            return Err(Error::InvalidConfig("final_lr_fraction must lie in [0, 1]".into()));
        }
        let a = &t.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::InvalidConfig("adam needs betas in [0, 1) and eps > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.sparsity.sp) {
            return Err(Error::InvalidConfig(format!("sp must lie in [0, 1], got {}", self.sparsity.sp)));
        }
        let d = &self.data;
        match d.source {
            DataSource::YinYang => {
                if self.network.n_in != crate::datasets::yinyang::N_INPUTS {
                    return Err(Error::InvalidConfig("yin-yang data needs n_in = 5".into()));
                }
                if !(d.window > 0.0) {
                    return Err(Error::InvalidConfig("window must be positive".into()));
                }
            }
            DataSource::SpikeFile => {
                if d.train_path.is_none() || d.test_path.is_none() {
                    return Err(Error::InvalidConfig("spike_file data needs train_path and test_path".into()));
                }
            }
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        match self.network.topology {
            Topology::FeedForward => Objective::Ttfs(self.loss),
            Topology::Recurrent => Objective::Readout,
        }
    }
}
