use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::component_rng;
use crate::nn::{Conv2d, Init, ParamStore};
use crate::scalar::Scalar;

/// Stream index of the style network's initialization RNG.
pub const STYLE_STREAM: u64 = 5;

/// Fixed feature network whose designated layer outputs feed the Gram comparison.
pub trait FeatureExtractor<T: Scalar> {
    /// One `[N, C_j, H_j, W_j]` map per designated layer.
    fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>>;
}

/// `phi(x) = x`: the image itself is the only designated layer.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl<T: Scalar> FeatureExtractor<T> for IdentityExtractor {
    fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        if g.shape(x).len() != 4 {
            return Err(Error::Shape(format!("expected [N, C, H, W], got {:?}", g.shape(x))));
        }
        Ok(vec![x])
    }
}

/// Randomly initialized, frozen stack of stride-2 3x3 convolutions with
/// leaky-ReLU activations. Every layer is designated.
#[derive(Debug, Clone)]
pub struct StyleFeatureExtractor<T> {
    params: ParamStore<T>,
    convs: Vec<Conv2d>,
    input_gain: f64,
    slope: f64,
}

impl<T: Scalar> StyleFeatureExtractor<T> {
    pub const DEFAULT_WIDTHS: [usize; 3] = [8, 16, 32];

    /// `input_gain` multiplies pixels before the first layer; the loss scales
    /// with its fourth power.
    pub fn new(in_channels: usize, widths: &[usize], input_gain: f64, seed: u64) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::config("losses.style_widths", "must be non-empty and positive"));
        }
        if !(input_gain.is_finite() && input_gain > 0.0) {
            return Err(Error::config("losses.style_input_gain", "must be positive and finite"));
        }
        let mut rng = component_rng(seed, STYLE_STREAM);
        Ok(Self::with_rng(in_channels, widths, input_gain, &mut rng))
    }

    pub fn with_rng<R: Rng>(in_channels: usize, widths: &[usize], input_gain: f64, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let mut cin = in_channels;
        let convs = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let c = Conv2d::new(&mut params, &format!("phi{i}"), cin, w, 3, 2, 1, Init::HeNormal { gain: 1.0 }, rng);
                cin = w;
                c
            })
            .collect();
        StyleFeatureExtractor {
            params,
            convs,
            input_gain,
            slope: 0.2,
        }
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn num_layers(&self) -> usize {
        self.convs.len()
    }
}

impl<T: Scalar> FeatureExtractor<T> for StyleFeatureExtractor<T> {
    fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        let p = self.params.bind(g, false);
        let mut h = if self.input_gain == 1.0 { x } else { g.scale(x, self.input_gain) };
        let mut out = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let y = conv.forward(g, &p, h)?;
            h = g.leaky_relu(y, self.slope);
            out.push(h);
        }
        Ok(out)
    }
}
