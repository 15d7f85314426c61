//! Run configuration: one TOML file with every model, masking, training,
//! data and output setting. Missing keys take their defaults; unknown keys
//! are rejected.
//!
//! ```toml
//! seed = 7
//! out = "runs/demo"
//!
//! [model]
//! layout = "coco18"
//! dims = 2
//! clip_len = 16
//! channels = [64, 128]
//! temporal = "separable"
//!
//! [masking]
//! p_joint = 0.1
//! p_frame = 0.1
//!
//! [train]
//! epochs = 10
//! batch_size = 32
//!
//! [data]
//! synthetic_train = 400
//! synthetic_test = 100
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{PoolingResiduals, TemporalKind};
use crate::model::{derive_seed, MaskingProbs, ModelConfig, StreamSet};
use crate::skeleton::JointLayout;
use crate::synthetic::SyntheticConfig;
use crate::train::Hyperparams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Built-in layout name (`coco18`, `kinect20`) or a layout TOML path.
    pub layout: String,
    pub dims: usize,
    pub clip_len: usize,
    pub channels: [usize; 2],
    pub head_hidden: usize,
    pub dropout: f64,
    pub temporal: TemporalKind,
    pub pooling: PoolingResiduals,
    pub streams: StreamSet,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            layout: "coco18".into(),
            dims: 2,
            clip_len: 64,
            channels: [64, 128],
            head_hidden: 64,
            dropout: 0.5,
            temporal: TemporalKind::Separable,
            pooling: PoolingResiduals::default(),
            streams: StreamSet::ALL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let hp = Hyperparams::default();
        TrainSection {
            learning_rate: hp.learning_rate,
            momentum: hp.momentum,
            batch_size: hp.batch_size,
            epochs: hp.epochs,
            lr_decay_every: hp.lr_decay_every,
            lr_decay_factor: hp.lr_decay_factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Clip archive written by `ingest`. Without one, training uses the
    /// synthetic fall/walk generator.
    pub archive: Option<PathBuf>,
    pub train_fraction: f64,
    /// Window stride used by `ingest`.
    pub stride: usize,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub synthetic_seed: u64,
    pub synthetic_noise: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            archive: None,
            train_fraction: 0.9,
            stride: 32,
            synthetic_train: 400,
            synthetic_test: 100,
            synthetic_seed: 0,
            synthetic_noise: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub model: ModelSection,
    pub masking: MaskingProbs,
    pub train: TrainSection,
    pub data: DataSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            model: ModelSection::default(),
            masking: MaskingProbs::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn layout(&self) -> Result<JointLayout> {
        JointLayout::resolve(&self.model.layout)
    }

    pub fn model_config(&self, num_classes: usize) -> Result<ModelConfig> {
        let m = &self.model;
        let mut cfg = ModelConfig::new(self.layout()?, m.dims, m.clip_len, num_classes);
        cfg.channels = m.channels;
        cfg.head_hidden = m.head_hidden;
        cfg.dropout = m.dropout;
        cfg.temporal = m.temporal;
        cfg.pooling = m.pooling;
        cfg.streams = m.streams;
        cfg.masking = self.masking;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let t = &self.train;
        Hyperparams {
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: derive_seed(&[self.seed, 0x74_7261_696e]),
            lr_decay_every: t.lr_decay_every,
            lr_decay_factor: t.lr_decay_factor,
        }
    }

    /// Seed for parameter initialization.
    pub fn init_seed(&self) -> u64 {
        derive_seed(&[self.seed, 0x696e_6974])
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            frames: self.model.clip_len,
            noise: self.data.synthetic_noise,
            invalid_rate: 0.0,
        }
    }
}
