use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Classical momentum: `v <- momentum*v + g; p <- p - lr*v`.
pub fn sgd_update<T: Scalar>(params: &mut [T], grads: &[T], velocity: &mut [T], lr: f64, momentum: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape(format!(
            "sgd: {} params, {} grads, {} velocity",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient element {i} is {}", grads[i])));
    }
    let (lr, m): (T, T) = (lit(lr), lit(momentum));
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = m * *v + g;
        *p = *p - lr * *v;
    }
    Ok(())
}

/// Momentum SGD state for one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: ParamStore<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(params: &ParamStore<T>, lr: f64, momentum: f64) -> Self {
        let mut velocity = ParamStore::new();
        for (name, t) in params.iter() {
            velocity.push(name, Tensor::zeros(t.shape()));
        }
        Sgd { lr, momentum, velocity }
    }

    /// Apply one update; nothing changes if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (g, (name, p)) in grads.iter().zip(params.iter()) {
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!("gradient of `{name}`: {:?} vs {:?}", g.shape(), p.shape())));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
        }
        for ((p, v), g) in params.tensors_mut().zip(self.velocity.tensors_mut()).zip(grads) {
            sgd_update(p.data_mut(), g.data(), v.data_mut(), self.lr, self.momentum)?;
        }
        Ok(())
    }
}

/// Rescale `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm.is_finite() && norm > max_norm && norm > 0.0 {
        let s: T = lit(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}
