use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, Init, Linear, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::latent::LatentCode;

/// Stride-2 convolutional stack with separate mean and log-variance heads.
#[derive(Debug, Clone)]
pub struct Encoder<T> {
    pub params: ParamStore<T>,
    convs: Vec<Conv2d>,
    mu_head: Linear,
    logvar_head: Linear,
    flat_dim: usize,
    resolution: [usize; 3],
    slope: f64,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let mut convs = Vec::with_capacity(cfg.stages());
        let mut cin = cfg.resolution[0];
        for (i, &w) in cfg.encoder_widths.iter().enumerate() {
            convs.push(Conv2d::new(&mut params, &format!("conv{i}"), cin, w, 3, 2, 1, Init::Uniform, rng));
            cin = w;
        }
        let (bh, bw) = cfg.bottleneck();
        let flat_dim = cin * bh * bw;
        let mu_head = Linear::new(&mut params, "mu", flat_dim, cfg.latent_dim, Init::Uniform, rng);
        let logvar_head = Linear::new(&mut params, "logvar", flat_dim, cfg.latent_dim, Init::Uniform, rng);
        Encoder {
            params,
            convs,
            mu_head,
            logvar_head,
            flat_dim,
            resolution: cfg.resolution,
            slope: cfg.leaky_slope,
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1..] != self.resolution {
            return Err(Error::Shape(format!(
                "encoder expects [N, {}, {}, {}], got {:?}",
                self.resolution[0], self.resolution[1], self.resolution[2], shape
            )));
        }
        Ok(())
    }

    /// Returns `(mu, logvar)`, each `[N, latent_dim]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<(Var, Var)> {
        self.check_input(g.shape(x))?;
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, p, h)?;
            h = g.leaky_relu(h, self.slope);
        }
        let n = g.shape(h)[0];
        let flat = g.reshape(h, &[n, self.flat_dim])?;
        let mu = self.mu_head.forward(g, p, flat)?;
        let logvar = self.logvar_head.forward(g, p, flat)?;
        Ok((mu, logvar))
    }

    /// Deterministic `(mu, logvar)` for a batch of images; no sampling.
    pub fn encode(&self, pixels: &Tensor<T>) -> Result<LatentCode<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.input(pixels.clone());
        let (mu, logvar) = self.forward(&mut g, &p, x)?;
        Ok(LatentCode::new(g.value(mu).clone(), g.value(logvar).clone()))
    }
}
