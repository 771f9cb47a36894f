use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolutional backbone of the expression classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    #[default]
    Mbconv,
    Resblock,
}

impl Backbone {
    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::Mbconv => "mbconv",
            Backbone::Resblock => "resblock",
        }
    }
}

impl std::str::FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mbconv" => Ok(Backbone::Mbconv),
            "resblock" => Ok(Backbone::Resblock),
            other => Err(Error::config("backbone", format!("expected mbconv|resblock, got `{other}`"))),
        }
    }
}

/// Which latent the discriminator sees during training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LatentInput {
    #[default]
    Sampled,
    Mean,
}

/// Architecture of all four learnable components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `[channels, height, width]` of input and reconstructed images.
    pub resolution: [usize; 3],
    pub latent_dim: usize,
    /// One stride-2 stage per entry.
    pub encoder_widths: Vec<usize>,
    /// One 2x upsampling stage per entry; must match the encoder depth.
    pub generator_widths: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub discriminator_input: LatentInput,
    pub num_attr_values: usize,
    pub num_classes: usize,
    pub backbone: Backbone,
    pub expansion: usize,
    pub se_ratio: f64,
    pub classifier_grid: usize,
    pub classifier_channels: usize,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            resolution: [3, 128, 128],
            latent_dim: 256,
            encoder_widths: vec![32, 64, 128, 256],
            generator_widths: vec![256, 128, 64, 32],
            discriminator_hidden: vec![128],
            discriminator_input: LatentInput::Sampled,
            num_attr_values: 2,
            num_classes: 7,
            backbone: Backbone::Mbconv,
            expansion: 4,
            se_ratio: 0.25,
            classifier_grid: 4,
            classifier_channels: 64,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn stages(&self) -> usize {
        self.encoder_widths.len()
    }

    /// Spatial size of the deepest encoder map.
    pub fn bottleneck(&self) -> (usize, usize) {
        let f = 1usize << self.stages();
        (self.resolution[1] / f, self.resolution[2] / f)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("model.{field}"), msg));
        if self.latent_dim == 0 {
            return bad("latent_dim", "must be at least 1".into());
        }
        if self.resolution.contains(&0) {
            return bad("resolution", format!("{:?} has a zero dimension", self.resolution));
        }
        for (field, widths) in [
            ("encoder_widths", &self.encoder_widths),
            ("generator_widths", &self.generator_widths),
        ] {
            if widths.is_empty() || widths.contains(&0) {
                return bad(field, format!("{widths:?} must be non-empty and positive"));
            }
        }
        if self.discriminator_hidden.contains(&0) {
            return bad("discriminator_hidden", "widths must be positive".into());
        }
        if self.generator_widths.len() != self.encoder_widths.len() {
            return bad(
                "generator_widths",
                format!(
                    "{} stages but the encoder has {}",
                    self.generator_widths.len(),
                    self.encoder_widths.len()
                ),
            );
        }
        let f = 1usize << self.stages();
        if !self.resolution[1].is_multiple_of(f) || !self.resolution[2].is_multiple_of(f) {
            return bad(
                "resolution",
                format!(
                    "{}x{} is not divisible by 2^{}",
                    self.resolution[1],
                    self.resolution[2],
                    self.stages()
                ),
            );
        }
        if self.num_attr_values < 2 {
            return bad("num_attr_values", "need at least 2 attribute values".into());
        }
        if self.num_classes < 2 {
            return bad("num_classes", "need at least 2 classes".into());
        }
        if self.expansion == 0 || self.classifier_grid == 0 || self.classifier_channels == 0 {
            return bad("classifier", "expansion, grid and channels must be positive".into());
        }
        if !(self.se_ratio > 0.0 && self.se_ratio <= 1.0) {
            return bad("se_ratio", format!("{} not in (0, 1]", self.se_ratio));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope", format!("{} not in [0, 1)", self.leaky_slope));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_reaches_8x8() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.bottleneck(), (8, 8));
    }

    #[test]
    fn rejects_indivisible_resolution() {
        let c = ModelConfig {
            resolution: [3, 100, 128],
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn rejects_mismatched_generator() {
        let c = ModelConfig {
            generator_widths: vec![8],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
