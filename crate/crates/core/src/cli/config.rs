use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{AugmentPhases, TrainingConfig};

/// Where the images come from: two manifests, or a synthetic dataset
/// regenerated from `synth` inside the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_manifest: Option<PathBuf>,
    pub synth: SynthConfig,
}

impl DataConfig {
    pub fn uses_synth(&self) -> bool {
        self.train_manifest.is_none() && self.test_manifest.is_none()
    }
}

/// Attributes to audit. `a*b` requests an intersectional report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub attributes: Vec<String>,
    /// Inferred from the predictions when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            attributes: vec![crate::data::SYNTH_ATTRIBUTE.into()],
            num_classes: None,
        }
    }
}

/// Complete description of a run. The defaults are a desk-scale synthetic
/// experiment that finishes in a couple of minutes on one CPU core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("run"),
            data: DataConfig::default(),
            model: desk_model(),
            training: desk_training(),
            metrics: MetricsConfig::default(),
        }
    }
}

/// Architecture sized for 32x32 grayscale synthetic images.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        resolution: [1, 32, 32],
        latent_dim: 8,
        encoder_widths: vec![8, 16, 32],
        generator_widths: vec![32, 16, 8],
        discriminator_hidden: vec![64],
        num_attr_values: 2,
        num_classes: 4,
        classifier_channels: 16,
        ..ModelConfig::default()
    }
}

pub fn desk_training() -> TrainingConfig {
    TrainingConfig {
        lr: 0.01,
        clf_lr: Some(0.05),
        vae_epochs: 20,
        clf_epochs: 15,
        grad_clip: Some(1.0),
        kl_warmup_epochs: 5,
        augment: AugmentPhases { vae: false, clf: false },
        val_fraction: 0.0,
        ..TrainingConfig::default()
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0);
            Error::Parse {
                path: origin.to_string(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Write the resolved config to `dir/config.toml`.
    pub fn save_to(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(super::CONFIG_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        if self.data.train_manifest.is_some() != self.data.test_manifest.is_some() {
            return Err(Error::config(
                "data.test_manifest",
                "train_manifest and test_manifest must be given together",
            ));
        }
        if self.data.uses_synth() {
            let s = &self.data.synth;
            s.validate()?;
            if s.resolution != self.model.resolution {
                return Err(Error::config(
                    "model.resolution",
                    format!("{:?} but synth.resolution is {:?}", self.model.resolution, s.resolution),
                ));
            }
            if s.num_classes != self.model.num_classes {
                return Err(Error::config(
                    "model.num_classes",
                    format!("{} but synth.num_classes is {}", self.model.num_classes, s.num_classes),
                ));
            }
            if s.num_attr_values != self.model.num_attr_values {
                return Err(Error::config(
                    "model.num_attr_values",
                    format!("{} but synth.num_attr_values is {}", self.model.num_attr_values, s.num_attr_values),
                ));
            }
        }
        if self.metrics.attributes.is_empty() {
            return Err(Error::config("metrics.attributes", "name at least one attribute"));
        }
        Ok(())
    }

    /// Rewrite relative manifest paths against the current directory.
    pub fn absolutize(&mut self) -> Result<()> {
        for p in [&mut self.data.train_manifest, &mut self.data.test_manifest].into_iter().flatten() {
            if p.is_relative() {
                let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
                *p = cwd.join(&*p);
            }
        }
        Ok(())
    }
}
