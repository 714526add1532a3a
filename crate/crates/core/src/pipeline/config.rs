use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::debate::{EndpointDescriptor, EndpointKind, Script, Verdict};
use crate::error::{Error, Result};
use crate::fadenet::{ArchitectureFlags, NetworkConfig};
use crate::losses::LossConfig;
use crate::prompting::SamplingParams;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Linear warmup, then cosine annealing to zero.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Peak learning rate, reached at the end of warmup.
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub schedule: LrSchedule,
    pub epochs: usize,
    /// Seeds weight initialization, data order and augmentation.
    pub seed: u64,
    /// Radius of the disk used to dilate scribbles into the mixed target.
    pub dilation_radius: usize,
    pub horizontal_flip: bool,
    /// Save a checkpoint every this many epochs (and after the last).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.momentum, self.weight_decay];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Config("lr, momentum and weight_decay must be positive".into()));
        }
        if self.momentum >= 1.0 {
            return Err(Error::Config("momentum must be below 1".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("batch_size, epochs and checkpoint_every must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) must be smaller than epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebateConfig {
    pub max_rounds: u32,
    /// Upper bound on concurrently running debates per image.
    pub max_parallel: usize,
    pub segmenter: EndpointDescriptor,
    pub affirmative: EndpointDescriptor,
    pub negative: EndpointDescriptor,
    pub judge: EndpointDescriptor,
    /// Optional JSON file replacing the bundled meta prompt.
    #[serde(default)]
    pub meta_prompt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub histogram_bins: usize,
    /// Predicted scribble probabilities above this per-image percentile
    /// count as high-response pixels.
    pub high_response_percentile: f64,
    /// Channels shown per level in feature dumps.
    pub dump_channels: usize,
}

/// Subdirectory names of a dataset root. Files are matched by stem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetLayout {
    pub images: String,
    pub scribbles: String,
    pub ground_truth: String,
}

impl Default for DatasetLayout {
    fn default() -> Self {
        Self {
            images: "images".into(),
            scribbles: "scribbles".into(),
            ground_truth: "gt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub network: NetworkConfig,
    pub architecture: ArchitectureFlags,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub sampling: SamplingParams,
    pub debate: DebateConfig,
    pub analysis: AnalysisConfig,
    pub layout: DatasetLayout,
}

fn remote() -> EndpointDescriptor {
    EndpointDescriptor {
        kind: EndpointKind::Remote,
        address: None,
        script: None,
        timeout_seconds: 120.0,
        max_concurrency: 4,
    }
}

impl PipelineConfig {
    /// Full-scale network and schedule with remote backends.
    pub fn full() -> Self {
        Self {
            network: NetworkConfig::full(),
            architecture: ArchitectureFlags::default(),
            loss: LossConfig::default(),
            train: TrainConfig {
                batch_size: 4,
                lr: 0.03,
                momentum: 0.9,
                weight_decay: 5e-4,
                warmup_epochs: 20,
                schedule: LrSchedule::Cosine,
                epochs: 100,
                seed: 0,
                dilation_radius: 3,
                horizontal_flip: true,
                checkpoint_every: 10,
            },
            sampling: SamplingParams::default(),
            debate: DebateConfig {
                max_rounds: 2,
                max_parallel: 4,
                segmenter: remote(),
                affirmative: remote(),
                negative: remote(),
                judge: remote(),
                meta_prompt: None,
            },
            analysis: AnalysisConfig {
                histogram_bins: 10,
                high_response_percentile: 90.0,
                dump_channels: 16,
            },
            layout: DatasetLayout::default(),
        }
    }

    /// Small network, short schedule, and offline backends: the oracle
    /// segmenter and scripted agents.
    pub fn toy() -> Self {
        let mut cfg = Self::full();
        cfg.network = NetworkConfig::toy();
        cfg.train.epochs = 5;
        cfg.train.warmup_epochs = 1;
        cfg.train.checkpoint_every = 1;
        cfg.debate = DebateConfig {
            max_rounds: 2,
            max_parallel: 2,
            segmenter: EndpointDescriptor::oracle(),
            affirmative: EndpointDescriptor::scripted(Script::Seeded { seed: 0 }),
            negative: EndpointDescriptor::scripted(Script::Seeded { seed: 0 }),
            judge: EndpointDescriptor::scripted(Script::Verdict {
                verdict: Verdict::Retain,
            }),
            meta_prompt: None,
        };
        cfg.analysis.dump_channels = 8;
        cfg
    }

    pub fn preset(toy: bool) -> Self {
        if toy {
            Self::toy()
        } else {
            Self::full()
        }
    }

    /// Overlays a TOML document on `base`; keys absent from the document keep
    /// their preset values.
    pub fn from_toml_str(text: &str, base: &Self) -> Result<Self> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        merge_tables(&mut merged, overlay);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, base: &Self) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.architecture.validate()?;
        self.loss.weights.validate()?;
        self.train.validate()?;
        self.sampling.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.debate.max_rounds == 0 || self.debate.max_parallel == 0 {
            return Err(Error::Config("debate max_rounds and max_parallel must be positive".into()));
        }
        if self.analysis.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be positive".into()));
        }
        if !(0.0..100.0).contains(&self.analysis.high_response_percentile) {
            return Err(Error::Config("high_response_percentile must lie in [0, 100)".into()));
        }
        Ok(())
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
