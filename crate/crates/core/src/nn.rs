//! Parameter storage and the two parametric layer kinds used by every component.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, named parameter tensors of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.entries.push((name.into(), value));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    /// Replace a tensor by name, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        if self.get(id).shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter `{name}`: expected {:?}, got {:?}",
                self.get(id).shape(),
                value.shape()
            )));
        }
        self.entries[id.0].1 = value;
        Ok(())
    }

    /// Put every tensor on the tape, differentiable or constant.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        Bound(
            self.entries
                .iter()
                .map(|(_, t)| if trainable { g.param(t.clone()) } else { g.input(t.clone()) })
                .collect(),
        )
    }

    /// Digest over names, shapes, and bit patterns.
    pub fn checksum(&self) -> u64 {
        self.entries.iter().fold(0x9e37_79b9_7f4a_7c15u64, |acc, (n, t)| {
            let name_hash = n.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
            (acc.rotate_left(7) ^ name_hash ^ t.checksum()).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }
}

/// Tape handles of a [`ParamStore`] bound into one graph.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weight and bias.
    Uniform,
    /// `N(0, gain^2 * 2 / fan_in)` weights, zero bias.
    HeNormal { gain: f64 },
    Zeros,
}

fn init_tensor<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, init: Init, bias: bool, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = match init {
        Init::Zeros => vec![T::zero(); n],
        Init::Uniform => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| lit(rng.random_range(-bound..bound))).collect()
        }
        Init::HeNormal { gain } => {
            if bias {
                vec![T::zero(); n]
            } else {
                let std = gain * (2.0 / fan_in as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let e: f64 = rng.sample(StandardNormal);
                        lit(std * e)
                    })
                    .collect()
            }
        }
    };
    Tensor::from_vec(shape, data).expect("init length matches shape")
}

/// Fully connected layer `y = x W + b`, `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = store.push(format!("{name}.weight"), init_tensor(&[in_dim, out_dim], in_dim, init, false, rng));
        let bias = store.push(format!("{name}.bias"), init_tensor(&[out_dim], in_dim, init, true, rng));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.weight))?;
        g.add_bias(y, p.var(self.bias))
    }
}

/// 2-D convolution with bias; square kernel, symmetric padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels / groups * kernel * kernel;
        let weight = store.push(
            format!("{name}.weight"),
            init_tensor(&[out_channels, in_channels / groups, kernel, kernel], fan_in, init, false, rng),
        );
        let bias = store.push(format!("{name}.bias"), init_tensor(&[out_channels], fan_in, init, true, rng));
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad: kernel / 2,
            groups,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.conv2d(x, p.var(self.weight), self.stride, self.pad, self.groups)?;
        g.add_bias(y, p.var(self.bias))
    }
}
