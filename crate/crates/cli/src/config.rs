//! Experiment configuration, read from a single TOML file.
//!
//! ```toml
//! seed = 0
//! out_dir = "runs/baseline"
//!
//! [dataset]
//! dir = "data"
//! image_size = 64
//! count_per_class = 500
//! train_family = { kind = "grid", period = 8, amplitude = 0.05 }
//! test_families = [{ kind = "upsample", factor = 2 }]
//!
//! [train]
//! epochs = 12
//! pipeline = { augmentations = [{ kind = "frequency", ratio = 0.15, band = "all" }] }
//!
//! [prune]
//! prune_ratio = 0.5
//! ```
//!
//! Relative paths are taken relative to the directory holding the file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fdmask::augment::PipelineSpec;
use fdmask::nn::{default_arch, LayerDef, Optimizer, TrainConfig};
use fdmask::pruning::PruneSpec;
use fdmask::spectra::DEFAULT_DENOISE_RADIUS;
use fdmask::synthgen::{ArtifactFamily, DatasetManifest, SplitFractions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fail;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub prune: PruneSpec,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub dir: PathBuf,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_count")]
    pub count_per_class: usize,
    pub train_family: ArtifactFamily,
    #[serde(default)]
    pub test_families: Vec<ArtifactFamily>,
    #[serde(default)]
    pub splits: SplitFractions,
}

fn default_image_size() -> usize {
    64
}

fn default_channels() -> usize {
    3
}

fn default_count() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Layer list; the default network when absent.
    pub layers: Option<Vec<LayerDef>>,
    /// Center crop applied before scoring; full frame when absent.
    pub eval_crop: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub pipeline: PipelineSpec,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            epochs: base.epochs,
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            optimizer: base.optimizer,
            pipeline: base.pipeline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub denoise_radius: usize,
    /// Dataset split the heatmaps are computed from.
    pub split: String,
    /// Cap on images per family; all when absent.
    pub max_images: Option<usize>,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            denoise_radius: DEFAULT_DENOISE_RADIUS,
            split: "test".into(),
            max_images: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Seeds every axis value is run with; the experiment seed when empty.
    pub seeds: Vec<u64>,
    /// Axis values as text; each axis has built-in defaults.
    pub values: Vec<String>,
    /// Masking ratio for the band, channel, transform and augmentation axes.
    pub ratio: Option<f64>,
    /// Parallel runs; 1 (serial) when absent.
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| fail("config", e.message().to_string()))?;
        config
            .validate()
            .map_err(|e| fail("config", format!("{e:#}")))?;
        Ok(config)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config = Self::from_toml(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config, base))
    }

    pub fn validate(&self) -> Result<()> {
        self.manifest().validate()?;
        self.train_config().validate()?;
        self.prune.validate()?;
        if let Some(layers) = &self.model.layers {
            fdmask::nn::Model::<f32>::zeros(self.dataset.channels, layers)?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> DatasetManifest {
        let d = &self.dataset;
        DatasetManifest {
            seed: self.seed,
            image_size: d.image_size,
            channels: d.channels,
            count_per_class: d.count_per_class,
            train_family: d.train_family,
            test_families: d.test_families.clone(),
            splits: d.splits,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            seed: self.seed,
            pipeline: t.pipeline.clone(),
        }
    }

    pub fn layers(&self) -> Vec<LayerDef> {
        self.model
            .layers
            .clone()
            .unwrap_or_else(|| default_arch(self.dataset.channels))
    }

    /// Every family the dataset holds, training family first.
    pub fn families(&self) -> Vec<ArtifactFamily> {
        let mut out = vec![self.dataset.train_family];
        for f in &self.dataset.test_families {
            if !out.contains(f) {
                out.push(*f);
            }
        }
        out
    }

    /// SHA-256 of the canonical JSON form of this configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
