use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, Linear, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::ModelConfig;

/// Fully connected attribute classifier over latent vectors.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    pub params: ParamStore<T>,
    layers: Vec<Linear>,
    latent_dim: usize,
    slope: f64,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let mut dims = vec![cfg.latent_dim];
        dims.extend_from_slice(&cfg.discriminator_hidden);
        dims.push(cfg.num_attr_values);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&mut params, &format!("fc{i}"), w[0], w[1], Init::Uniform, rng))
            .collect();
        Discriminator {
            params,
            layers,
            latent_dim: cfg.latent_dim,
            slope: cfg.leaky_slope,
        }
    }

    /// Attribute logits `[N, num_attr_values]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        let s = g.shape(z);
        if s.len() != 2 || s[1] != self.latent_dim {
            return Err(Error::Shape(format!("discriminator expects [N, {}], got {s:?}", self.latent_dim)));
        }
        let mut h = z;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h)?;
            if i < last {
                h = g.leaky_relu(h, self.slope);
            }
        }
        Ok(h)
    }

    pub fn discriminate(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let zv = g.input(z.clone());
        let out = self.forward(&mut g, &p, zv)?;
        Ok(g.value(out).clone())
    }
}
