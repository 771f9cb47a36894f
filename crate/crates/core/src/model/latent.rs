use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Batched approximate posterior `q(z|x) = N(mu, exp(logvar))` plus, once sampled,
/// the draw `z` and the noise `eps` that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T> {
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
    pub z: Option<Tensor<T>>,
    pub eps: Option<Tensor<T>>,
}

impl<T: Scalar> LatentCode<T> {
    pub fn new(mu: Tensor<T>, logvar: Tensor<T>) -> Self {
        LatentCode {
            mu,
            logvar,
            z: None,
            eps: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.row_len()
    }

    pub fn batch(&self) -> usize {
        self.mu.batch()
    }

    /// `z = mu + exp(logvar / 2) * eps`; mu and logvar are left untouched.
    pub fn reparameterize(&self, eps: Tensor<T>) -> Result<LatentCode<T>> {
        if eps.shape() != self.mu.shape() || self.logvar.shape() != self.mu.shape() {
            return Err(Error::Shape(format!(
                "reparameterize: mu {:?}, logvar {:?}, eps {:?}",
                self.mu.shape(),
                self.logvar.shape(),
                eps.shape()
            )));
        }
        let half: T = lit(0.5);
        let z: Vec<T> = self
            .mu
            .data()
            .iter()
            .zip(self.logvar.data())
            .zip(eps.data())
            .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
            .collect();
        Ok(LatentCode {
            mu: self.mu.clone(),
            logvar: self.logvar.clone(),
            z: Some(Tensor::from_vec(self.mu.shape(), z)?),
            eps: Some(eps),
        })
    }
}

/// Differentiable reparameterization on the tape; `eps` enters as a constant.
pub fn reparameterize_var<T: Scalar>(g: &mut Graph<T>, mu: Var, logvar: Var, eps: Tensor<T>) -> Result<Var> {
    if eps.shape() != g.shape(mu) {
        return Err(Error::Shape(format!("eps {:?} vs mu {:?}", eps.shape(), g.shape(mu))));
    }
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let e = g.input(eps);
    let noise = g.mul(std, e)?;
    g.add(mu, noise)
}
