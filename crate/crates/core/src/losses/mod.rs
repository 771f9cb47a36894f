//! Training objectives. Each loss has a graph form (`*_var`, differentiable)
//! and a value form that evaluates the same graph on constant inputs.
//! Every loss is an arithmetic mean over the batch.

mod style;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use style::{FeatureExtractor, IdentityExtractor, StyleFeatureExtractor, STYLE_STREAM};

/// Style-term weight used unless configured otherwise.
pub const DEFAULT_ALPHA: f64 = 10.0;

/// Encoder-side form of the adversarial term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AdversarialForm {
    /// Cross-entropy of the discriminator's prediction against the uniform distribution.
    #[default]
    Confusion,
    /// Negated discriminator cross-entropy on the true attribute.
    Negated,
}

impl AdversarialForm {
    pub fn as_str(self) -> &'static str {
        match self {
            AdversarialForm::Confusion => "confusion",
            AdversarialForm::Negated => "negated",
        }
    }
}

impl std::str::FromStr for AdversarialForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confusion" => Ok(AdversarialForm::Confusion),
            "negated" => Ok(AdversarialForm::Negated),
            other => Err(Error::config("adversarial", format!("expected confusion|negated, got `{other}`"))),
        }
    }
}

/// Weights of symmetric cross-entropy and the value substituted for `log 0`
/// in the reverse term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceWeights {
    pub a: f64,
    pub b: f64,
    pub log_zero: f64,
}

impl Default for SceWeights {
    fn default() -> Self {
        SceWeights {
            a: 1.0,
            b: 1.0,
            log_zero: -4.0,
        }
    }
}

impl SceWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0) || (self.a == 0.0 && self.b == 0.0) {
            return Err(Error::config("losses.sce", format!("a={} b={}: need a, b >= 0, not both 0", self.a, self.b)));
        }
        if !self.log_zero.is_finite() {
            return Err(Error::config("losses.sce.log_zero", "must be finite"));
        }
        Ok(())
    }
}

/// Terms of the autoencoder objective; `total = kl_weight*kl + adversarial + alpha*style`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VAELossBreakdown<T> {
    pub kl: T,
    pub adversarial: T,
    pub style: T,
    pub total: T,
    pub alpha: T,
    pub kl_weight: T,
}

fn check_finite<T: Scalar>(what: &str, t: &Tensor<T>) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains NaN or infinity")))
    }
}

fn logits_shape<T: Scalar>(g: &Graph<T>, logits: Var) -> Result<(usize, usize)> {
    match *g.shape(logits) {
        [n, k] if n > 0 && k > 0 => Ok((n, k)),
        ref s => Err(Error::Shape(format!("logits must be a non-empty [N, K] matrix, got {s:?}"))),
    }
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Invalid(format!("label {bad} out of range for {k} classes")));
    }
    Ok(())
}

/// `0.5 * sum_d (mu^2 + exp(logvar) - 1 - logvar)`, averaged over rows.
pub fn kl_divergence_var<T: Scalar>(g: &mut Graph<T>, mu: Var, logvar: Var) -> Result<Var> {
    if g.shape(mu) != g.shape(logvar) || g.shape(mu).len() != 2 {
        return Err(Error::Shape(format!(
            "kl: mu {:?} and logvar {:?} must be equal [N, D]",
            g.shape(mu),
            g.shape(logvar)
        )));
    }
    let n = g.shape(mu)[0].max(1);
    let m2 = g.square(mu);
    let e = g.exp(logvar);
    let t = g.add(m2, e)?;
    let t = g.sub(t, logvar)?;
    let t = g.shift(t, -1.0);
    let s = g.sum(t);
    Ok(g.scale(s, 0.5 / n as f64))
}

pub fn kl_divergence<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>) -> Result<T> {
    check_finite("mu", mu)?;
    check_finite("logvar", logvar)?;
    let mut g = Graph::new();
    let (m, l) = (g.input(mu.clone()), g.input(logvar.clone()));
    let out = kl_divergence_var(&mut g, m, l)?;
    Ok(g.scalar(out))
}

/// Gram matrix of one `[C, H, W]` map or a batch `[N, C, H, W]`, normalized by `C*H*W`.
pub fn gram_matrix<T: Scalar>(features: &Tensor<T>) -> Result<Tensor<T>> {
    let single = features.shape().len() == 3;
    let x = if single {
        let mut s = vec![1];
        s.extend_from_slice(features.shape());
        features.clone().reshape(&s)?
    } else {
        features.clone()
    };
    let mut g = Graph::new();
    let xv = g.input(x);
    let gv = g.gram(xv)?;
    let out = g.value(gv).clone();
    if single {
        let c = out.shape()[1];
        out.reshape(&[c, c])
    } else {
        Ok(out)
    }
}

/// `sum_j ||G_j(y_hat) - G_j(y)||_F^2`, averaged over the batch.
pub fn style_loss_var<T: Scalar, E: FeatureExtractor<T> + ?Sized>(
    g: &mut Graph<T>,
    y: Var,
    y_hat: Var,
    extractor: &E,
) -> Result<Var> {
    if g.shape(y) != g.shape(y_hat) {
        return Err(Error::Shape(format!("style: y {:?} vs y_hat {:?}", g.shape(y), g.shape(y_hat))));
    }
    let n = g.shape(y).first().copied().unwrap_or(1).max(1);
    let fy = extractor.features(g, y)?;
    let fh = extractor.features(g, y_hat)?;
    let mut total: Option<Var> = None;
    for (a, b) in fy.into_iter().zip(fh) {
        let ga = g.gram(a)?;
        let gb = g.gram(b)?;
        let d = g.sub(gb, ga)?;
        let d2 = g.square(d);
        let s = g.sum(d2);
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let total = total.ok_or_else(|| Error::Invalid("feature extractor has no designated layers".into()))?;
    Ok(g.scale(total, 1.0 / n as f64))
}

pub fn style_loss<T: Scalar, E: FeatureExtractor<T> + ?Sized>(y: &Tensor<T>, y_hat: &Tensor<T>, extractor: &E) -> Result<T> {
    let mut g = Graph::new();
    let (a, b) = (g.input(y.clone()), g.input(y_hat.clone()));
    let out = style_loss_var(&mut g, a, b, extractor)?;
    Ok(g.scalar(out))
}

/// Cross-entropy of attribute logits against the true attribute values.
pub fn discriminator_loss_var<T: Scalar>(g: &mut Graph<T>, logits: Var, attrs: &[usize]) -> Result<Var> {
    let (n, k) = logits_shape(g, logits)?;
    check_labels(attrs, n, k)?;
    let lsm = g.log_softmax(logits)?;
    let picked = g.pick(lsm, attrs)?;
    let m = g.mean(picked);
    Ok(g.scale(m, -1.0))
}

pub fn discriminator_loss<T: Scalar>(logits: &Tensor<T>, attrs: &[usize]) -> Result<T> {
    let mut g = Graph::new();
    let l = g.input(logits.clone());
    let out = discriminator_loss_var(&mut g, l, attrs)?;
    Ok(g.scalar(out))
}

/// Cross-entropy between the uniform distribution and `softmax(logits)`;
/// minimal (`ln K`) exactly when the prediction is uniform.
pub fn adversarial_latent_loss_var<T: Scalar>(g: &mut Graph<T>, logits: Var) -> Result<Var> {
    let (n, k) = logits_shape(g, logits)?;
    let lsm = g.log_softmax(logits)?;
    let s = g.sum(lsm);
    Ok(g.scale(s, -1.0 / (n * k) as f64))
}

pub fn adversarial_latent_loss<T: Scalar>(logits: &Tensor<T>) -> Result<T> {
    let mut g = Graph::new();
    let l = g.input(logits.clone());
    let out = adversarial_latent_loss_var(&mut g, l)?;
    Ok(g.scalar(out))
}

/// Encoder-side adversarial term in either form.
pub fn adversarial_objective_var<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    attrs: &[usize],
    form: AdversarialForm,
) -> Result<Var> {
    match form {
        AdversarialForm::Confusion => adversarial_latent_loss_var(g, logits),
        AdversarialForm::Negated => {
            let d = discriminator_loss_var(g, logits, attrs)?;
            Ok(g.scale(d, -1.0))
        }
    }
}

/// `a*CE + b*RCE` with `RCE = -log_zero * (1 - p_label)`.
pub fn symmetric_cross_entropy_var<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[usize],
    w: SceWeights,
) -> Result<Var> {
    w.validate()?;
    let (n, k) = logits_shape(g, logits)?;
    check_labels(labels, n, k)?;
    let ce = {
        let lsm = g.log_softmax(logits)?;
        let picked = g.pick(lsm, labels)?;
        let m = g.mean(picked);
        g.scale(m, -w.a)
    };
    if w.b == 0.0 {
        return Ok(ce);
    }
    let p = g.softmax(logits)?;
    let py = g.pick(p, labels)?;
    let py = g.mean(py);
    let rce = g.scale(py, w.log_zero);
    let rce = g.shift(rce, -w.log_zero);
    let rce = g.scale(rce, w.b);
    if w.a == 0.0 {
        Ok(rce)
    } else {
        g.add(ce, rce)
    }
}

pub fn symmetric_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize], w: SceWeights) -> Result<T> {
    let mut g = Graph::new();
    let l = g.input(logits.clone());
    let out = symmetric_cross_entropy_var(&mut g, l, labels, w)?;
    Ok(g.scalar(out))
}

/// Inputs to the autoencoder objective, as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct VaeTerms<'a> {
    pub x: Var,
    pub x_hat: Var,
    pub mu: Var,
    pub logvar: Var,
    /// Discriminator logits on the latent and the true attribute values;
    /// `None` drops the adversarial term.
    pub disc: Option<(Var, &'a [usize])>,
}

/// Graph nodes of each term plus the weighted total.
#[derive(Debug, Clone, Copy)]
pub struct VaeLossVars {
    pub kl: Var,
    pub adversarial: Option<Var>,
    pub style: Var,
    pub total: Var,
}

impl VaeLossVars {
    pub fn breakdown<T: Scalar>(&self, g: &Graph<T>, alpha: f64, kl_weight: f64) -> VAELossBreakdown<T> {
        VAELossBreakdown {
            kl: g.scalar(self.kl),
            adversarial: self.adversarial.map_or(T::zero(), |v| g.scalar(v)),
            style: g.scalar(self.style),
            total: g.scalar(self.total),
            alpha: T::from_f64_lossy(alpha),
            kl_weight: T::from_f64_lossy(kl_weight),
        }
    }
}

pub fn vae_loss_var<T: Scalar, E: FeatureExtractor<T> + ?Sized>(
    g: &mut Graph<T>,
    terms: VaeTerms<'_>,
    extractor: &E,
    alpha: f64,
    kl_weight: f64,
    form: AdversarialForm,
) -> Result<VaeLossVars> {
    let kl = kl_divergence_var(g, terms.mu, terms.logvar)?;
    let style = style_loss_var(g, terms.x, terms.x_hat, extractor)?;
    let mut total = g.scale(kl, kl_weight);
    let adversarial = match terms.disc {
        Some((logits, attrs)) => {
            let a = adversarial_objective_var(g, logits, attrs, form)?;
            total = g.add(total, a)?;
            Some(a)
        }
        None => None,
    };
    let ws = g.scale(style, alpha);
    let total = g.add(total, ws)?;
    Ok(VaeLossVars {
        kl,
        adversarial,
        style,
        total,
    })
}

/// Value form of the autoencoder objective with the confusion adversarial term.
pub fn vae_total_loss<T: Scalar, E: FeatureExtractor<T> + ?Sized>(
    x: &Tensor<T>,
    mu: &Tensor<T>,
    logvar: &Tensor<T>,
    x_hat: &Tensor<T>,
    disc_logits: &Tensor<T>,
    extractor: &E,
    alpha: f64,
) -> Result<VAELossBreakdown<T>> {
    let mut g = Graph::new();
    let terms = VaeTerms {
        x: g.input(x.clone()),
        x_hat: g.input(x_hat.clone()),
        mu: g.input(mu.clone()),
        logvar: g.input(logvar.clone()),
        disc: Some((g.input(disc_logits.clone()), &[])),
    };
    let vars = vae_loss_var(&mut g, terms, extractor, alpha, 1.0, AdversarialForm::Confusion)?;
    let b = vars.breakdown(&g, alpha, 1.0);
    for (name, v) in [("kl", b.kl), ("adversarial", b.adversarial), ("style", b.style), ("total", b.total)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss is not finite")));
        }
    }
    Ok(b)
}
