//! Run configuration, stored as TOML.
//!
//! A config is a flat set of sections; every key except `seed` has a
//! default. `version` tags the dialect and must equal [`CONFIG_VERSION`].
//!
//! ```toml
//! version = 1
//! seed = 7
//! task = "nmnist-classify"
//! arm = "memristor-pruning"
//! output_dir = "runs/mp"
//!
//! [data]
//! n_train = 8000
//! n_test = 2000
//!
//! [train]
//! epochs = 8
//! learning_rate = 1.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{ArmConfig, BaselineKind, ProgrammingNoiseForm, Task, TaskData};
use crate::data::{
    load_mnist_idx, load_nmnist_dir, stratified_split, stratified_subset, synthesize_spike_dataset, SaccadeConfig,
    SpikeDataset,
};
use crate::device::DeviceConfig;
use crate::dynamic::StopPolicy;
use crate::error::{Error, Result};
use crate::models::{InitConfig, InpaintData};
use crate::pruning::TrainConfig;
use crate::snn::lif::LifParams;

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable naming the dataset root.
pub const DATA_ROOT_ENV: &str = "MEMTOPO_DATA";

fn version() -> u32 {
    CONFIG_VERSION
}

fn default_arm() -> BaselineKind {
    BaselineKind::MemristorPruning
}

/// Score learning rate used when a config leaves it out.
pub fn default_learning_rate(task: Task) -> f32 {
    match task {
        Task::NmnistClassify => 1.0,
        Task::MnistInpaint => 10.0,
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "version")]
    pub version: u32,
    pub seed: u64,
    #[serde(default)]
    pub task: Task,
    #[serde(default = "default_arm")]
    pub arm: BaselineKind,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub device: DeviceConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub stop: StopPolicy,
    #[serde(default)]
    pub noise: NoiseConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory; falls back to `$MEMTOPO_DATA`, then `data`.
    pub root: Option<PathBuf>,
    /// IDX image and label files, relative to the root.
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Directory of AER event files laid out as `<digit>/<name>.bin`,
    /// relative to the root. When absent, event streams are synthesized
    /// from the IDX digits.
    pub events: Option<PathBuf>,
    pub n_train: usize,
    pub n_test: usize,
    pub t_bins: usize,
    pub saccade: SaccadeConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            images: PathBuf::from("images-idx3-ubyte.gz"),
            labels: PathBuf::from("labels-idx1-ubyte.gz"),
            events: None,
            n_train: 8000,
            n_test: 2000,
            t_bins: 10,
            saccade: SaccadeConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn root(&self) -> PathBuf {
        self.root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    pub fn images_path(&self) -> PathBuf {
        self.root().join(&self.images)
    }

    pub fn labels_path(&self) -> PathBuf {
        self.root().join(&self.labels)
    }

    pub fn events_path(&self) -> Option<PathBuf> {
        self.events.as_ref().map(|e| self.root().join(e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub gain: f32,
    pub k_percent: f32,
    /// Timesteps; 0 selects the task default (10 for classification, 16
    /// for inpainting).
    pub t_steps: usize,
    pub lif: LifParams,
    pub kl_weight: f32,
    pub weight_learning_rate: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gain: 3.0,
            k_percent: 50.0,
            t_steps: 0,
            lif: LifParams::default(),
            kl_weight: 0.01,
            weight_learning_rate: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub read_scales: Vec<f32>,
    pub read_seeds: usize,
    pub programming_scales: Vec<f32>,
    pub programming_draws: usize,
    pub programming_form: ProgrammingNoiseForm,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            read_scales: vec![0.0, 0.01, 0.02, 0.03, 0.1],
            read_seeds: 5,
            programming_scales: vec![0.0, 0.05, 0.1],
            programming_draws: 3,
            programming_form: ProgrammingNoiseForm::Multiplicative,
        }
    }
}

impl RunConfig {
    /// A config with defaults everywhere except the mandatory seed.
    pub fn new(seed: u64, task: Task, arm: BaselineKind) -> Self {
        Self {
            version: CONFIG_VERSION,
            seed,
            task,
            arm,
            output_dir: default_output(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            device: DeviceConfig::default(),
            train: TrainConfig {
                learning_rate: default_learning_rate(task),
                ..TrainConfig::default()
            },
            stop: StopPolicy::default(),
            noise: NoiseConfig::default(),
        }
    }

    /// Parse a config. A missing `train.learning_rate` takes the task
    /// default of [`default_learning_rate`].
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        let lr_given = table
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("learning_rate"));
        let mut cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if !lr_given {
            cfg.train.learning_rate = default_learning_rate(cfg.task);
        }
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn t_steps(&self) -> usize {
        match (self.model.t_steps, self.task) {
            (0, Task::NmnistClassify) => 10,
            (0, Task::MnistInpaint) => 16,
            (t, _) => t,
        }
    }

    /// Check values and that every input path exists.
    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.train.validate()?;
        self.model.lif.validate()?;
        crate::pruning::topk_mask(&[1.0], self.model.k_percent)?;
        if !(self.model.gain > 0.0) {
            return Err(Error::Config(format!("gain must be > 0, got {}", self.model.gain)));
        }
        if self.data.n_train == 0 || self.data.n_test == 0 {
            return Err(Error::Config("n_train and n_test must be >= 1".into()));
        }
        if self.data.t_bins < self.t_steps() && self.task == Task::NmnistClassify {
            return Err(Error::Config(format!(
                "t_bins ({}) must cover t_steps ({})",
                self.data.t_bins,
                self.t_steps()
            )));
        }
        StopPolicy {
            t_max: self.t_steps(),
            ..self.stop
        }
        .validate()?;
        let mut paths = vec![self.data.images_path(), self.data.labels_path()];
        if self.task == Task::NmnistClassify {
            if let Some(p) = self.data.events_path() {
                paths = vec![p];
            }
        }
        for p in paths {
            if !p.exists() {
                return Err(Error::Config(format!("input path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// The stop policy with `t_max` matched to the model.
    pub fn stop_policy(&self) -> StopPolicy {
        StopPolicy {
            t_max: self.t_steps(),
            ..self.stop
        }
    }

    pub fn arm_config(&self) -> ArmConfig {
        ArmConfig {
            init: InitConfig {
                weights: self.arm.weights(),
                gain: self.model.gain,
                k_percent: self.model.k_percent,
                device: self.device.clone(),
                programming_noise: 0.0,
                seed: self.seed,
                programming_seed: None,
            },
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
            weight_learning_rate: self.model.weight_learning_rate,
            lif: self.model.lif,
            t_steps: self.t_steps(),
            kl_weight: self.model.kl_weight,
            eval_seed: self.seed ^ 0xe7a1,
        }
    }

    /// Load and split the dataset of the configured task.
    pub fn load_data(&self) -> Result<Dataset> {
        Dataset::load(self)
    }
}

/// A loaded task dataset with its split.
#[derive(Clone, Debug)]
pub enum DatasetKind {
    Spikes(SpikeDataset),
    Images(InpaintData),
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let d = &cfg.data;
        let kind = match (cfg.task, d.events_path()) {
            (Task::NmnistClassify, Some(dir)) => DatasetKind::Spikes(load_nmnist_dir(dir, d.t_bins)?),
            (Task::NmnistClassify, None) => {
                let images = load_mnist_idx(d.images_path(), d.labels_path())?;
                DatasetKind::Spikes(synthesize_spike_dataset(&images, &d.saccade, d.t_bins, cfg.seed)?)
            }
            (Task::MnistInpaint, _) => {
                DatasetKind::Images(InpaintData::new(load_mnist_idx(d.images_path(), d.labels_path())?)?)
            }
        };
        let labels = match &kind {
            DatasetKind::Spikes(s) => &s.labels,
            DatasetKind::Images(i) => &i.clean.labels,
        };
        let (train, test) = split(labels, d.n_train, d.n_test, cfg.seed)?;
        Ok(Self { kind, train, test })
    }

    pub fn task_data(&self) -> TaskData<'_> {
        match &self.kind {
            DatasetKind::Spikes(data) => TaskData::Classify {
                data,
                train: &self.train,
                test: &self.test,
            },
            DatasetKind::Images(data) => TaskData::Inpaint {
                data,
                train: &self.train,
                test: &self.test,
            },
        }
    }
}

/// Stratified `n_test` hold-out, then a stratified `n_train` subset of the
/// rest (all of it if fewer remain).
pub fn split(labels: &[u8], n_train: usize, n_test: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let (pool, test) = stratified_split(labels, n_test, seed)?;
    let train = if n_train >= pool.len() {
        pool
    } else {
        stratified_subset(labels, &pool, n_train, seed ^ 1)?
    };
    Ok((train, test))
}
