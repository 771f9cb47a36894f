//! Encoder, generator, latent discriminator and expression classifier.

mod checkpoint;
mod classifier;
mod config;
mod discriminator;
mod encoder;
mod generator;
mod latent;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::ParamStore;
use crate::scalar::Scalar;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use classifier::{mbconv_forward, Block, Classifier, MbConvBlock, ResBlock, SqueezeExcite, NUM_BLOCKS};
pub use config::{Backbone, LatentInput, ModelConfig};
pub use discriminator::Discriminator;
pub use encoder::Encoder;
pub use generator::Generator;
pub use latent::{reparameterize_var, LatentCode};

/// Named component of a [`Model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    Encoder,
    Generator,
    Discriminator,
    Classifier,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Encoder,
        Component::Generator,
        Component::Discriminator,
        Component::Classifier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Encoder => "encoder",
            Component::Generator => "generator",
            Component::Discriminator => "discriminator",
            Component::Classifier => "classifier",
        }
    }

    /// Stream index of the component's initialization RNG.
    pub fn stream(self) -> u64 {
        match self {
            Component::Encoder => 1,
            Component::Generator => 2,
            Component::Discriminator => 3,
            Component::Classifier => 4,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

/// RNG for one component, independent of how many draws the others make.
pub fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// All learnable components sharing one configuration.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub classifier: Classifier<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = |c: Component| component_rng(seed, c.stream());
        Ok(Model {
            encoder: Encoder::new(&config, &mut rng(Component::Encoder)),
            generator: Generator::new(&config, &mut rng(Component::Generator)),
            discriminator: Discriminator::new(&config, &mut rng(Component::Discriminator)),
            classifier: Classifier::new(&config, &mut rng(Component::Classifier)),
            config,
        })
    }

    pub fn params(&self, c: Component) -> &ParamStore<T> {
        match c {
            Component::Encoder => &self.encoder.params,
            Component::Generator => &self.generator.params,
            Component::Discriminator => &self.discriminator.params,
            Component::Classifier => &self.classifier.params,
        }
    }

    pub fn params_mut(&mut self, c: Component) -> &mut ParamStore<T> {
        match c {
            Component::Encoder => &mut self.encoder.params,
            Component::Generator => &mut self.generator.params,
            Component::Discriminator => &mut self.discriminator.params,
            Component::Classifier => &mut self.classifier.params,
        }
    }

    pub fn checksum(&self) -> u64 {
        Component::ALL
            .iter()
            .fold(0u64, |acc, &c| acc.rotate_left(13) ^ self.params(c).checksum())
    }

    pub fn all_finite(&self) -> bool {
        Component::ALL.iter().all(|&c| self.params(c).all_finite())
    }
}

#[cfg(test)]
mod tests;
