use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, Init, Linear, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::ModelConfig;

/// Mirror of the encoder: linear projection, then upsample + 3x3 conv per stage,
/// squashed into `[0, 1]` by a final sigmoid.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    pub params: ParamStore<T>,
    project: Linear,
    convs: Vec<Conv2d>,
    seed_shape: [usize; 3],
    latent_dim: usize,
    slope: f64,
}

impl<T: Scalar> Generator<T> {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let (bh, bw) = cfg.bottleneck();
        let w0 = cfg.generator_widths[0];
        let project = Linear::new(&mut params, "project", cfg.latent_dim, w0 * bh * bw, Init::Uniform, rng);
        let mut outs: Vec<usize> = cfg.generator_widths[1..].to_vec();
        outs.push(cfg.resolution[0]);
        let mut convs = Vec::with_capacity(outs.len());
        let mut cin = w0;
        for (i, &cout) in outs.iter().enumerate() {
            convs.push(Conv2d::new(&mut params, &format!("conv{i}"), cin, cout, 3, 1, 1, Init::Uniform, rng));
            cin = cout;
        }
        Generator {
            params,
            project,
            convs,
            seed_shape: [w0, bh, bw],
            latent_dim: cfg.latent_dim,
            slope: cfg.leaky_slope,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        let s = g.shape(z).to_vec();
        if s.len() != 2 || s[1] != self.latent_dim {
            return Err(Error::Shape(format!("generator expects [N, {}], got {s:?}", self.latent_dim)));
        }
        let h = self.project.forward(g, p, z)?;
        let [c, bh, bw] = self.seed_shape;
        let mut h = g.reshape(h, &[s[0], c, bh, bw])?;
        for conv in &self.convs {
            h = g.leaky_relu(h, self.slope);
            h = g.upsample2x(h)?;
            h = conv.forward(g, p, h)?;
        }
        Ok(g.sigmoid(h))
    }

    /// Decode a batch of latents `[N, latent_dim]` into images.
    pub fn generate(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let zv = g.input(z.clone());
        let out = self.forward(&mut g, &p, zv)?;
        Ok(g.value(out).clone())
    }
}
