use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, Init, Linear, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::{Backbone, ModelConfig};

/// Number of blocks in the classification backbone.
pub const NUM_BLOCKS: usize = 3;

/// Squeeze-excitation gate: global pool, bottleneck MLP, sigmoid channel weights.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub reduce: Linear,
    pub expand: Linear,
}

/// Inverted residual block: 1x1 expansion, 3x3 depthwise, squeeze-excitation,
/// 1x1 projection, identity skip (stride 1, equal channels).
#[derive(Debug, Clone)]
pub struct MbConvBlock {
    pub expand: Conv2d,
    pub depthwise: Conv2d,
    pub se: Option<SqueezeExcite>,
    pub project: Conv2d,
    pub channels: usize,
}

impl MbConvBlock {
    pub fn new<T: Scalar, R: Rng>(
        params: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        expansion: usize,
        se_ratio: Option<f64>,
        rng: &mut R,
    ) -> Self {
        let hidden = channels * expansion;
        let expand = Conv2d::new(params, &format!("{name}.expand"), channels, hidden, 1, 1, 1, Init::Uniform, rng);
        let depthwise = Conv2d::new(params, &format!("{name}.depthwise"), hidden, hidden, 3, 1, hidden, Init::Uniform, rng);
        let se = se_ratio.map(|r| {
            let squeezed = ((channels as f64 * r).floor() as usize).max(1);
            SqueezeExcite {
                reduce: Linear::new(params, &format!("{name}.se_reduce"), hidden, squeezed, Init::Uniform, rng),
                expand: Linear::new(params, &format!("{name}.se_expand"), squeezed, hidden, Init::Uniform, rng),
            }
        });
        let project = Conv2d::new(params, &format!("{name}.project"), hidden, channels, 1, 1, 1, Init::Uniform, rng);
        MbConvBlock {
            expand,
            depthwise,
            se,
            project,
            channels,
        }
    }

    pub fn hidden_channels(&self) -> usize {
        self.expand.out_channels
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::Shape(format!("mbconv expects {} channels, got {s:?}", self.channels)));
        }
        let h = self.expand.forward(g, p, x)?;
        let h = g.silu(h);
        let h = self.depthwise.forward(g, p, h)?;
        let mut h = g.silu(h);
        if let Some(se) = &self.se {
            let pooled = g.global_avg_pool(h)?;
            let s = se.reduce.forward(g, p, pooled)?;
            let s = g.silu(s);
            let s = se.expand.forward(g, p, s)?;
            let gate = g.sigmoid(s);
            h = g.channel_scale(h, gate)?;
        }
        let h = self.project.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// Two 3x3 convolutions with an identity skip.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub channels: usize,
}

impl ResBlock {
    pub fn new<T: Scalar, R: Rng>(params: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut R) -> Self {
        ResBlock {
            conv1: Conv2d::new(params, &format!("{name}.conv1"), channels, channels, 3, 1, 1, Init::Uniform, rng),
            conv2: Conv2d::new(params, &format!("{name}.conv2"), channels, channels, 3, 1, 1, Init::Uniform, rng),
            channels,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::Shape(format!("resblock expects {} channels, got {s:?}", self.channels)));
        }
        let h = self.conv1.forward(g, p, x)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, p, h)?;
        let sum = g.add(x, h)?;
        Ok(g.relu(sum))
    }
}

#[derive(Debug, Clone)]
pub enum Block {
    MbConv(MbConvBlock),
    Res(ResBlock),
}

impl Block {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        match self {
            Block::MbConv(b) => b.forward(g, p, x),
            Block::Res(b) => b.forward(g, p, x),
        }
    }
}

/// Latent -> spatial grid -> three blocks -> global pool -> class logits.
#[derive(Debug, Clone)]
pub struct Classifier<T> {
    pub params: ParamStore<T>,
    project: Linear,
    pub blocks: Vec<Block>,
    head: Linear,
    grid: usize,
    channels: usize,
    latent_dim: usize,
}

impl<T: Scalar> Classifier<T> {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let (grid, ch) = (cfg.classifier_grid, cfg.classifier_channels);
        let project = Linear::new(&mut params, "project", cfg.latent_dim, ch * grid * grid, Init::Uniform, rng);
        let blocks = (0..NUM_BLOCKS)
            .map(|i| {
                let name = format!("block{i}");
                match cfg.backbone {
                    Backbone::Mbconv => Block::MbConv(MbConvBlock::new(
                        &mut params,
                        &name,
                        ch,
                        cfg.expansion,
                        Some(cfg.se_ratio),
                        rng,
                    )),
                    Backbone::Resblock => Block::Res(ResBlock::new(&mut params, &name, ch, rng)),
                }
            })
            .collect();
        let head = Linear::new(&mut params, "head", ch, cfg.num_classes, Init::Uniform, rng);
        Classifier {
            params,
            project,
            blocks,
            head,
            grid,
            channels: ch,
            latent_dim: cfg.latent_dim,
        }
    }

    /// Class logits `[N, num_classes]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        let s = g.shape(z).to_vec();
        if s.len() != 2 || s[1] != self.latent_dim {
            return Err(Error::Shape(format!("classifier expects [N, {}], got {s:?}", self.latent_dim)));
        }
        let h = self.project.forward(g, p, z)?;
        let mut h = g.reshape(h, &[s[0], self.channels, self.grid, self.grid])?;
        for block in &self.blocks {
            h = block.forward(g, p, h)?;
        }
        let pooled = g.global_avg_pool(h)?;
        self.head.forward(g, p, pooled)
    }

    pub fn classify(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let zv = g.input(z.clone());
        let out = self.forward(&mut g, &p, zv)?;
        Ok(g.value(out).clone())
    }
}

/// Run one block on a feature tensor outside any training graph.
pub fn mbconv_forward<T: Scalar>(features: &Tensor<T>, block: &MbConvBlock, params: &ParamStore<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.input(features.clone());
    let y = block.forward(&mut g, &p, x)?;
    Ok(g.value(y).clone())
}
