use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{AdversarialForm, SceWeights, DEFAULT_ALPHA};
use crate::model::LatentInput;
use crate::scalar::DType;

/// Phases that see augmented images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPhases {
    pub vae: bool,
    pub clf: bool,
}

impl Default for AugmentPhases {
    fn default() -> Self {
        AugmentPhases { vae: true, clf: true }
    }
}

/// Every optimization hyperparameter of both training phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lr: f64,
    /// Classifier-phase learning rate; `lr` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clf_lr: Option<f64>,
    pub momentum: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub vae_epochs: usize,
    pub clf_epochs: usize,
    pub disc_steps_per_enc_step: usize,
    pub seed: u64,
    pub precision: DType,
    pub adversarial_form: AdversarialForm,
    pub augment: AugmentPhases,
    /// Attribute name, or `a*b` for an intersection.
    pub protected_attribute: String,
    pub use_discriminator: bool,
    /// Deterministic autoencoder: no KL term and `z = mu`.
    pub autoencoder: bool,
    pub kl_weight: f64,
    /// Epochs over which the KL weight ramps linearly up to `kl_weight`; 0 disables.
    pub kl_warmup_epochs: usize,
    /// Joint L2 norm bound on encoder+generator gradients.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    pub style_input_gain: f64,
    pub style_widths: Vec<usize>,
    pub sce: SceWeights,
    /// Fraction of the training split held out to select the best classifier.
    pub val_fraction: f64,
    /// Latent fed to the classifier at evaluation.
    pub eval_latent: LatentInput,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 1e-4,
            clf_lr: None,
            momentum: 0.9,
            alpha: DEFAULT_ALPHA,
            batch_size: 32,
            vae_epochs: 50,
            clf_epochs: 30,
            disc_steps_per_enc_step: 1,
            seed: 0,
            precision: DType::F32,
            adversarial_form: AdversarialForm::Confusion,
            augment: AugmentPhases::default(),
            protected_attribute: "group".into(),
            use_discriminator: true,
            autoencoder: false,
            kl_weight: 1.0,
            kl_warmup_epochs: 0,
            grad_clip: None,
            style_input_gain: 3.0,
            style_widths: vec![8, 16, 32],
            sce: SceWeights::default(),
            val_fraction: 0.1,
            eval_latent: LatentInput::Mean,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: String| Err(Error::config(format!("training.{f}"), m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("{} must be positive", self.lr));
        }
        if let Some(l) = self.clf_lr {
            if !(l > 0.0 && l.is_finite()) {
                return bad("clf_lr", format!("{l} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", format!("{} not in [0, 1)", self.momentum));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha", format!("{} must be >= 0", self.alpha));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if self.vae_epochs == 0 || self.clf_epochs == 0 {
            return bad("epochs", "vae_epochs and clf_epochs must be at least 1".into());
        }
        if self.disc_steps_per_enc_step == 0 {
            return bad("disc_steps_per_enc_step", "must be at least 1".into());
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad("kl_weight", format!("{} must be >= 0", self.kl_weight));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip", format!("{c} must be positive"));
            }
        }
        if !(self.style_input_gain > 0.0 && self.style_input_gain.is_finite()) {
            return bad("style_input_gain", "must be positive".into());
        }
        if self.style_widths.is_empty() || self.style_widths.contains(&0) {
            return bad("style_widths", "must be non-empty and positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction", format!("{} not in [0, 1)", self.val_fraction));
        }
        if self.protected_attribute.is_empty() {
            return bad("protected_attribute", "must name an attribute".into());
        }
        self.sce.validate()
    }

    pub fn classifier_lr(&self) -> f64 {
        self.clf_lr.unwrap_or(self.lr)
    }

    /// KL weight in effect during `epoch` (0-based).
    pub fn kl_weight_at(&self, epoch: usize) -> f64 {
        if self.autoencoder {
            return 0.0;
        }
        if self.kl_warmup_epochs == 0 {
            return self.kl_weight;
        }
        self.kl_weight * ((epoch + 1) as f64 / self.kl_warmup_epochs as f64).min(1.0)
    }
}
