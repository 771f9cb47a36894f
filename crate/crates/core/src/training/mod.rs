//! Adversarial autoencoder training, classifier training on the frozen
//! encoder, and evaluation.

mod config;
mod log;
mod sgd;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autograd::Graph;
use crate::data::{augment_pixels, BalancedBatcher, Dataset, FLIP_PROBABILITY, MAX_ROTATION_DEG};
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss_var, symmetric_cross_entropy_var, vae_loss_var, StyleFeatureExtractor, VaeTerms,
};
use crate::metrics::{fairness_report, Prediction};
use crate::model::{component_rng, reparameterize_var, Checkpoint, Component, LatentInput, Model, ModelConfig, RngState};
use crate::nn::{Bound, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

pub use config::{AugmentPhases, TrainingConfig};
pub use log::{LogRecord, Phase, TrainingLog};
pub use sgd::{clip_grad_norm, sgd_update, Sgd};

/// RNG streams of the run seed beyond the component initializers.
pub mod streams {
    pub const VAE_DATA: u64 = 6;
    pub const CLF_DATA: u64 = 7;
    pub const VALIDATION_SPLIT: u64 = 8;
    pub const EVAL_NOISE: u64 = 9;
}

const EVAL_CHUNK: usize = 256;

/// Result of the autoencoder phase. When `aborted` is set the checkpoint
/// holds the last parameters for which every loss and gradient was finite.
#[derive(Debug, Clone)]
pub struct VaeOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub log: TrainingLog,
    pub aborted: Option<String>,
}

/// Result of the classifier phase.
#[derive(Debug, Clone)]
pub struct ClfOutcome<T> {
    pub last: Checkpoint<T>,
    /// Highest validation `mean accuracy * fairness`; equals `last` without validation data.
    pub best: Checkpoint<T>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub log: TrainingLog,
    pub aborted: Option<String>,
}

/// Split `0..n` into sorted (train, validation) rows.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let k = (n as f64 * fraction).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = component_rng(seed, streams::VALIDATION_SPLIT);
    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
    let mut val = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn normal_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| lit(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::from_vec(shape, data).expect("sized by shape")
}

/// Gather rows, augmenting each image with draws from `rng` when `augment` is set.
fn batch_pixels<T: Scalar>(data: &Dataset<T>, rows: &[usize], augment: bool, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let x = data.pixels.select_rows(rows);
    if !augment {
        return x;
    }
    let shape = x.shape().to_vec();
    let per = x.row_len();
    let img_shape = &shape[1..];
    let mut out = Vec::with_capacity(x.len());
    for i in 0..rows.len() {
        let img = Tensor::from_vec(img_shape, x.row(i).to_vec()).expect("row has image size");
        let flip = rng.random::<f64>() < FLIP_PROBABILITY;
        let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        out.extend_from_slice(augment_pixels(&img, flip, angle).data());
        debug_assert_eq!(out.len(), (i + 1) * per);
    }
    Tensor::from_vec(&shape, out).expect("same size")
}

fn grads_of<T: Scalar>(g: &crate::autograd::Gradients<T>, bound: &Bound, store: &ParamStore<T>) -> Vec<Tensor<T>> {
    bound
        .vars()
        .iter()
        .zip(store.tensors())
        .map(|(&v, p)| g.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect()
}

fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i)) == y)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn check_compat<T: Scalar>(model_cfg: &ModelConfig, data: &Dataset<T>) -> Result<()> {
    if data.manifest.resolution != model_cfg.resolution {
        return Err(Error::config(
            "model.resolution",
            format!("{:?} but the data is {:?}", model_cfg.resolution, data.manifest.resolution),
        ));
    }
    if data.attribute.values.len() != model_cfg.num_attr_values {
        return Err(Error::config(
            "model.num_attr_values",
            format!(
                "{} but `{}` has {} values",
                model_cfg.num_attr_values,
                data.attribute.name,
                data.attribute.values.len()
            ),
        ));
    }
    if data.manifest.num_classes != model_cfg.num_classes {
        return Err(Error::config(
            "model.num_classes",
            format!("{} but the data has {}", model_cfg.num_classes, data.manifest.num_classes),
        ));
    }
    Ok(())
}

fn metadata(cfg: &TrainingConfig, phase: Phase, epoch: usize) -> serde_json::Value {
    serde_json::json!({
        "phase": phase.as_str(),
        "epoch": epoch,
        "training": cfg,
    })
}

fn mean_of(records: &[Vec<(String, f64)>]) -> Vec<(String, f64)> {
    let Some(first) = records.first() else { return Vec::new() };
    first
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let s: f64 = records.iter().map(|r| r[i].1).sum();
            (name.clone(), s / records.len() as f64)
        })
        .collect()
}

/// Alternating min-max training of encoder, generator and discriminator.
///
/// Per batch: the discriminator takes `disc_steps_per_enc_step` steps on
/// its cross-entropy with the encoder frozen, then encoder and generator
/// take one step on `kl_weight*KL + adversarial + alpha*style` with the
/// discriminator frozen. Expression labels are never read.
pub fn train_vae<T: Scalar>(cfg: &TrainingConfig, model_cfg: &ModelConfig, data: &Dataset<T>) -> Result<VaeOutcome<T>> {
    cfg.validate()?;
    model_cfg.validate()?;
    check_compat(model_cfg, data)?;
    let mut model = Model::<T>::new(model_cfg.clone(), cfg.seed)?;
    let phi = StyleFeatureExtractor::<T>::new(model_cfg.resolution[0], &cfg.style_widths, cfg.style_input_gain, cfg.seed)?;
    let batcher = BalancedBatcher::new(&data.groups, model_cfg.num_attr_values, cfg.batch_size)?;
    let mut rng = component_rng(cfg.seed, streams::VAE_DATA);
    let mut opt_e = Sgd::new(&model.encoder.params, cfg.lr, cfg.momentum);
    let mut opt_g = Sgd::new(&model.generator.params, cfg.lr, cfg.momentum);
    let mut opt_d = Sgd::new(&model.discriminator.params, cfg.lr, cfg.momentum);
    let mut log = TrainingLog::new();
    let mut step = 0u64;
    let mut aborted = None;
    let mut epochs_done = 0;

    'epochs: for epoch in 0..cfg.vae_epochs {
        let klw = cfg.kl_weight_at(epoch);
        let mut records = Vec::new();
        for rows in batcher.epoch(&mut rng) {
            let x = batch_pixels(data, &rows, cfg.augment.vae, &mut rng);
            let attrs: Vec<usize> = rows.iter().map(|&i| data.groups[i]).collect();
            let eps = (!cfg.autoencoder).then(|| normal_tensor::<T>(&mut rng, &[rows.len(), model_cfg.latent_dim]));
            match vae_step(cfg, &mut model, &phi, [&mut opt_e, &mut opt_g, &mut opt_d], x, &attrs, eps, klw) {
                Ok(values) => {
                    step += 1;
                    log.step(step, Phase::Vae, values.clone())?;
                    records.push(values);
                }
                Err(Error::NonFinite(msg)) => {
                    aborted = Some(format!("step {}: {msg}", step + 1));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        epochs_done = epoch + 1;
        let mut summary = mean_of(&records);
        summary.push(("kl_weight".into(), klw));
        log.epoch(epoch as u64 + 1, Phase::Vae, summary);
    }
    let momentum = BTreeMap::from([
        (Component::Encoder, opt_e.velocity),
        (Component::Generator, opt_g.velocity),
        (Component::Discriminator, opt_d.velocity),
    ]);
    Ok(VaeOutcome {
        checkpoint: Checkpoint {
            model,
            step,
            momentum,
            rng: RngState::capture(&rng),
            metadata: metadata(cfg, Phase::Vae, epochs_done),
        },
        log,
        aborted,
    })
}

#[allow(clippy::too_many_arguments)]
fn vae_step<T: Scalar>(
    cfg: &TrainingConfig,
    model: &mut Model<T>,
    phi: &StyleFeatureExtractor<T>,
    [opt_e, opt_g, opt_d]: [&mut Sgd<T>; 3],
    x: Tensor<T>,
    attrs: &[usize],
    eps: Option<Tensor<T>>,
    kl_weight: f64,
) -> Result<Vec<(String, f64)>> {
    let mut values = Vec::new();
    let mut g = Graph::new();
    let pe = model.encoder.params.bind(&mut g, true);
    let pg = model.generator.params.bind(&mut g, true);
    let xv = g.input(x);
    let (mu, logvar) = model.encoder.forward(&mut g, &pe, xv)?;
    let z = match eps {
        Some(eps) => reparameterize_var(&mut g, mu, logvar, eps)?,
        None => mu,
    };
    let d_in = match model.config.discriminator_input {
        LatentInput::Sampled => z,
        LatentInput::Mean => mu,
    };

    if cfg.use_discriminator {
        let latent = g.value(d_in).clone();
        for _ in 0..cfg.disc_steps_per_enc_step {
            let mut gd = Graph::new();
            let pd = model.discriminator.params.bind(&mut gd, true);
            let zv = gd.input(latent.clone());
            let logits = model.discriminator.forward(&mut gd, &pd, zv)?;
            let loss = discriminator_loss_var(&mut gd, logits, attrs)?;
            let ce = gd.scalar(loss).as_f64();
            if !ce.is_finite() {
                return Err(Error::NonFinite("discriminator loss".into()));
            }
            let acc = accuracy(gd.value(logits), attrs);
            let grads = gd.backward(loss)?;
            let gr = grads_of(&grads, &pd, &model.discriminator.params);
            opt_d.step(&mut model.discriminator.params, &gr)?;
            values = vec![("disc_ce".to_string(), ce), ("disc_acc".to_string(), acc)];
        }
    }

    let x_hat = model.generator.forward(&mut g, &pg, z)?;
    let disc = if cfg.use_discriminator {
        let pd = model.discriminator.params.bind(&mut g, false);
        Some((model.discriminator.forward(&mut g, &pd, d_in)?, attrs))
    } else {
        None
    };
    let terms = VaeTerms {
        x: xv,
        x_hat,
        mu,
        logvar,
        disc,
    };
    let vars = vae_loss_var(&mut g, terms, phi, cfg.alpha, kl_weight, cfg.adversarial_form)?;
    let b = vars.breakdown(&g, cfg.alpha, kl_weight);
    let total = b.total.as_f64();
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("autoencoder loss {total}")));
    }
    let grads = g.backward(vars.total)?;
    let mut ge = grads_of(&grads, &pe, &model.encoder.params);
    let mut gg = grads_of(&grads, &pg, &model.generator.params);
    let ne = ge.len();
    let mut joint: Vec<Tensor<T>> = ge.drain(..).chain(gg.drain(..)).collect();
    let norm = match cfg.grad_clip {
        Some(c) => clip_grad_norm(&mut joint, c),
        None => clip_grad_norm(&mut joint, f64::INFINITY),
    };
    if !norm.is_finite() {
        return Err(Error::NonFinite("encoder/generator gradient".into()));
    }
    let gg = joint.split_off(ne);
    opt_e.step(&mut model.encoder.params, &joint)?;
    opt_g.step(&mut model.generator.params, &gg)?;

    values.extend([
        ("kl".to_string(), b.kl.as_f64()),
        ("adv".to_string(), b.adversarial.as_f64()),
        ("style".to_string(), b.style.as_f64()),
        ("total".to_string(), total),
        ("grad_norm".to_string(), norm),
    ]);
    Ok(values)
}

/// Encoder means (or samples) for `rows`, computed without gradients.
fn latents<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    mode: LatentInput,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<T>> {
    let code = model.encoder.encode(x)?;
    match (mode, rng) {
        (LatentInput::Sampled, Some(rng)) => {
            let eps = normal_tensor::<T>(rng, code.mu.shape());
            Ok(code.reparameterize(eps)?.z.expect("set by reparameterize"))
        }
        _ => Ok(code.mu),
    }
}

fn encode_all<T: Scalar>(model: &Model<T>, data: &Dataset<T>, mode: LatentInput, seed: u64) -> Result<Tensor<T>> {
    let mut rng = component_rng(seed, streams::EVAL_NOISE);
    let mut out = Vec::with_capacity(data.len() * model.config.latent_dim);
    let rows: Vec<usize> = (0..data.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let x = data.pixels.select_rows(chunk);
        out.extend_from_slice(latents(model, &x, mode, Some(&mut rng))?.data());
    }
    Tensor::from_vec(&[data.len(), model.config.latent_dim], out)
}

/// Classifier training on the frozen encoder's latents with symmetric
/// cross-entropy. The encoder, generator and discriminator are untouched.
pub fn train_classifier<T: Scalar>(
    cfg: &TrainingConfig,
    vae: &Checkpoint<T>,
    train: &Dataset<T>,
    val: Option<&Dataset<T>>,
) -> Result<ClfOutcome<T>> {
    cfg.validate()?;
    check_compat(&vae.model.config, train)?;
    let mut model = vae.model.clone();
    let mut rng = component_rng(cfg.seed, streams::CLF_DATA);
    let mut opt = Sgd::new(&model.classifier.params, cfg.classifier_lr(), cfg.momentum);
    let fixed = if cfg.augment.clf {
        None
    } else {
        Some(encode_all(&model, train, LatentInput::Mean, cfg.seed)?)
    };
    let mut log = TrainingLog::new();
    let mut step = vae.step;
    let mut best: Option<(f64, usize, Model<T>, ParamStore<T>)> = None;
    let mut aborted = None;
    let mut epochs_done = 0;
    let n = train.len();

    'epochs: for epoch in 0..cfg.clf_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut records = Vec::new();
        for rows in order.chunks(cfg.batch_size) {
            let z = match &fixed {
                Some(all) => all.select_rows(rows),
                None => {
                    let x = batch_pixels(train, rows, true, &mut rng);
                    latents(&model, &x, LatentInput::Mean, None)?
                }
            };
            let labels: Vec<usize> = rows.iter().map(|&i| train.labels[i]).collect();
            let mut g = Graph::new();
            let pc = model.classifier.params.bind(&mut g, true);
            let zv = g.input(z);
            let logits = model.classifier.forward(&mut g, &pc, zv)?;
            let loss = symmetric_cross_entropy_var(&mut g, logits, &labels, cfg.sce)?;
            let value = g.scalar(loss).as_f64();
            if !value.is_finite() {
                aborted = Some(format!("step {}: classifier loss {value}", step + 1));
                break 'epochs;
            }
            let acc = accuracy(g.value(logits), &labels);
            let grads = g.backward(loss)?;
            let gr = grads_of(&grads, &pc, &model.classifier.params);
            match opt.step(&mut model.classifier.params, &gr) {
                Ok(()) => {}
                Err(Error::NonFinite(m)) => {
                    aborted = Some(format!("step {}: {m}", step + 1));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            step += 1;
            let values = vec![("sce".to_string(), value), ("train_acc".to_string(), acc)];
            log.step(step, Phase::Clf, values.clone())?;
            records.push(values);
        }
        epochs_done = epoch + 1;
        let mut summary = mean_of(&records);
        if let Some(v) = val.filter(|v| !v.is_empty()) {
            let preds = evaluate(&model, v, cfg.eval_latent, cfg.seed)?;
            let (acc, fair) = match fairness_report(&preds, &v.attribute.name, Some(model.config.num_classes)) {
                Ok(r) => (r.mean_accuracy, r.fairness.score),
                Err(e) => {
                    ::log::warn!("validation fairness undefined: {e}");
                    let hits = preds.iter().filter(|p| p.pred == p.truth).count();
                    (hits as f64 / preds.len() as f64, 0.0)
                }
            };
            let score = acc * fair;
            summary.extend([
                ("val_acc".to_string(), acc),
                ("val_fairness".to_string(), fair),
                ("val_score".to_string(), score),
            ]);
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, epoch + 1, model.clone(), opt.velocity.clone()));
            }
        }
        log.epoch(epoch as u64 + 1, Phase::Clf, summary);
    }

    let mut momentum = vae.momentum.clone();
    momentum.insert(Component::Classifier, opt.velocity.clone());
    let rng_state = RngState::capture(&rng);
    let last = Checkpoint {
        model,
        step,
        momentum: momentum.clone(),
        rng: rng_state.clone(),
        metadata: metadata(cfg, Phase::Clf, epochs_done),
    };
    let (best_score, best_epoch, best) = match best {
        Some((score, epoch, m, v)) => {
            let mut mom = momentum;
            mom.insert(Component::Classifier, v);
            let ck = Checkpoint {
                model: m,
                step: last.step,
                momentum: mom,
                rng: rng_state,
                metadata: metadata(cfg, Phase::Clf, epoch),
            };
            (score, epoch, ck)
        }
        None => (f64::NAN, epochs_done, last.clone()),
    };
    Ok(ClfOutcome {
        last,
        best,
        best_epoch,
        best_score,
        log,
        aborted,
    })
}

/// Predicted class of every record via `argmax classify(latent)`, in record order.
/// The mean path involves no randomness; the sampled path draws noise from `seed`.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset<T>, latent: LatentInput, seed: u64) -> Result<Vec<Prediction>> {
    if data.manifest.resolution != model.config.resolution {
        return Err(Error::Shape(format!(
            "data resolution {:?} vs model {:?}",
            data.manifest.resolution, model.config.resolution
        )));
    }
    let z = encode_all(model, data, latent, seed)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut preds = Vec::with_capacity(data.len());
    for chunk in rows.chunks(EVAL_CHUNK) {
        let logits = model.classifier.classify(&z.select_rows(chunk))?;
        for (j, &i) in chunk.iter().enumerate() {
            let r = &data.manifest.records[i];
            preds.push(Prediction {
                id: r.path.clone(),
                truth: data.labels[i],
                pred: argmax(logits.row(j)),
                attrs: r.attrs.clone(),
            });
        }
    }
    Ok(preds)
}

/// Accuracy of the discriminator at recovering `data.groups` from latents.
pub fn discriminator_accuracy<T: Scalar>(model: &Model<T>, data: &Dataset<T>, latent: LatentInput, seed: u64) -> Result<f64> {
    let z = encode_all(model, data, latent, seed)?;
    let logits = model.discriminator.discriminate(&z)?;
    Ok(accuracy(&logits, &data.groups))
}

#[cfg(test)]
mod tests;
