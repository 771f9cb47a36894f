//! Command-line operations: dataset synthesis, two-phase training,
//! evaluation, fairness audits and the ablation grid.
//!
//! Every command takes a resolved [`RunConfig`]. `synth`, `train` and `ablate`
//! write a copy of it into their output directory, so
//! `train --config <run>/config.toml` reproduces a run.

mod args;
mod config;

use std::path::{Path, PathBuf};

pub use args::{run_cli, Cli, Command, Overrides};
pub use config::{desk_model, desk_training, DataConfig, MetricsConfig, RunConfig};

use crate::data::{load_manifest, synth_generate, Dataset, DatasetManifest, SynthOutput, PRODUCT_SEPARATOR};
use crate::error::{Error, Result};
use crate::metrics::{
    fairness_report, intersectional_report, read_predictions, render_report, write_predictions, FairnessReport,
    Prediction, ReportFormat,
};
use crate::model::{Backbone, Checkpoint};
use crate::scalar::{DType, Scalar};
use crate::training::{discriminator_accuracy, split_validation, train_classifier, train_vae};

pub const CONFIG_FILE: &str = "config.toml";
pub const DATA_DIR: &str = "data";
pub const VAE_CHECKPOINT: &str = "vae.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LOG_FILE: &str = "train.log";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_TABLE: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const ABLATION_TABLE: &str = "ablation.txt";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const CELLS_DIR: &str = "cells";

/// Manifest locations of both splits. Image paths resolve against each
/// manifest's directory.
#[derive(Debug, Clone)]
pub struct DataSources {
    pub train: PathBuf,
    pub test: PathBuf,
}

impl DataSources {
    fn load<T: Scalar>(path: &Path, attribute: &str) -> Result<Dataset<T>> {
        let manifest: DatasetManifest = load_manifest(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Dataset::load(&manifest, base, attribute)
    }

    pub fn train<T: Scalar>(&self, attribute: &str) -> Result<Dataset<T>> {
        Self::load(&self.train, attribute)
    }

    pub fn test<T: Scalar>(&self, attribute: &str) -> Result<Dataset<T>> {
        Self::load(&self.test, attribute)
    }
}

/// Manifests named by the config, or a synthetic dataset generated under `dir/data`.
pub fn prepare_data(cfg: &RunConfig, dir: &Path) -> Result<DataSources> {
    match (&cfg.data.train_manifest, &cfg.data.test_manifest) {
        (Some(train), Some(test)) => Ok(DataSources {
            train: train.clone(),
            test: test.clone(),
        }),
        _ => {
            let out = synth_generate(&cfg.data.synth, &dir.join(DATA_DIR))?;
            Ok(DataSources {
                train: out.train_manifest,
                test: out.test_manifest,
            })
        }
    }
}

/// Generate the synthetic dataset straight into `cfg.out`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthOutput> {
    cfg.data.synth.validate()?;
    let out = synth_generate(&cfg.data.synth, &cfg.out)?;
    cfg.save_to(&cfg.out)?;
    Ok(out)
}

/// What a finished training run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub best_epoch: usize,
    pub best_score: f64,
    pub final_step: u64,
}

/// Both training phases: writes `vae.ckpt`, `final.ckpt`, `best.ckpt`,
/// `train.log` and `config.toml` into `cfg.out`. A non-finite abort still
/// writes what was reached and returns [`Error::NonFinite`].
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    cfg.save_to(&cfg.out)?;
    let sources = prepare_data(cfg, &cfg.out)?;
    train_with(cfg, &sources)
}

fn train_with(cfg: &RunConfig, sources: &DataSources) -> Result<TrainSummary> {
    match cfg.training.precision {
        DType::F32 => train_typed::<f32>(cfg, sources),
        DType::F64 => train_typed::<f64>(cfg, sources),
    }
}

fn train_typed<T: Scalar>(cfg: &RunConfig, sources: &DataSources) -> Result<TrainSummary> {
    let dir = &cfg.out;
    let t = &cfg.training;
    let all = sources.train::<T>(&t.protected_attribute)?;
    let (tr, va) = split_validation(all.len(), t.val_fraction, t.seed);
    let (train, val) = (all.select(&tr), all.select(&va));
    let vae = train_vae(t, &cfg.model, &train)?;
    vae.checkpoint.save(&dir.join(VAE_CHECKPOINT))?;
    let mut log = vae.log;
    if let Some(why) = vae.aborted {
        log.save(&dir.join(LOG_FILE))?;
        return Err(Error::NonFinite(format!("autoencoder phase aborted: {why}")));
    }
    let clf = train_classifier(t, &vae.checkpoint, &train, (!val.is_empty()).then_some(&val))?;
    clf.last.save(&dir.join(FINAL_CHECKPOINT))?;
    clf.best.save(&dir.join(BEST_CHECKPOINT))?;
    log.extend(clf.log)?;
    log.save(&dir.join(LOG_FILE))?;
    if let Some(why) = clf.aborted {
        return Err(Error::NonFinite(format!("classifier phase aborted: {why}")));
    }
    Ok(TrainSummary {
        dir: dir.clone(),
        best_epoch: clf.best_epoch,
        best_score: clf.best_score,
        final_step: clf.last.step,
    })
}

/// Predictions of `checkpoint` on the test split, written to `predictions.jsonl`.
/// A `config.toml` already in `cfg.out` (typically the training run's) is kept.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<Vec<Prediction>> {
    cfg.validate()?;
    if !cfg.out.join(CONFIG_FILE).exists() {
        cfg.save_to(&cfg.out)?;
    }
    let sources = prepare_data(cfg, &cfg.out)?;
    let preds = match cfg.training.precision {
        DType::F32 => eval_typed::<f32>(cfg, &sources, checkpoint)?.0,
        DType::F64 => eval_typed::<f64>(cfg, &sources, checkpoint)?.0,
    };
    write_predictions(&cfg.out.join(PREDICTIONS_FILE), &preds)?;
    Ok(preds)
}

/// Test predictions plus held-out discriminator accuracy on the same latents
/// the discriminator was trained on.
fn eval_typed<T: Scalar>(cfg: &RunConfig, sources: &DataSources, checkpoint: &Path) -> Result<(Vec<Prediction>, f64)> {
    let ck = Checkpoint::<T>::load(checkpoint)?;
    let test = sources.test::<T>(&cfg.training.protected_attribute)?;
    let seed = cfg.training.seed;
    let preds = crate::training::evaluate(&ck.model, &test, cfg.training.eval_latent, seed)?;
    let dacc = discriminator_accuracy(&ck.model, &test, ck.model.config.discriminator_input, seed)?;
    Ok((preds, dacc))
}

/// One report per configured attribute; `a*b` yields an intersectional report.
pub fn audit_predictions(preds: &[Prediction], metrics: &MetricsConfig) -> Result<Vec<FairnessReport>> {
    metrics
        .attributes
        .iter()
        .map(|attr| match attr.split_once(PRODUCT_SEPARATOR) {
            Some((a, b)) => intersectional_report(preds, (a, b), None, metrics.num_classes),
            None => fairness_report(preds, attr, metrics.num_classes),
        })
        .collect()
}

/// Audit a predictions file; writes `report.txt` and `report.csv`.
pub fn cmd_audit(cfg: &RunConfig, predictions: &Path) -> Result<Vec<FairnessReport>> {
    if cfg.metrics.attributes.is_empty() {
        return Err(Error::config("metrics.attributes", "name at least one attribute"));
    }
    let preds = read_predictions(predictions)?;
    let reports = audit_predictions(&preds, &cfg.metrics)?;
    write_reports(&cfg.out, &reports)?;
    Ok(reports)
}

fn write_reports(dir: &Path, reports: &[FairnessReport]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, format) in [(REPORT_TABLE, ReportFormat::Table), (REPORT_CSV, ReportFormat::Csv)] {
        let path = dir.join(name);
        std::fs::write(&path, render_report(reports, format)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// One configuration of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationCell {
    pub autoencoder: bool,
    pub discriminator: bool,
    pub backbone: Backbone,
}

impl AblationCell {
    /// `{VAE, AE} x {disc on, off} x {MBConv, ResBlock}`.
    pub fn grid() -> Vec<AblationCell> {
        let mut cells = Vec::with_capacity(8);
        for autoencoder in [false, true] {
            for discriminator in [true, false] {
                for backbone in [Backbone::Mbconv, Backbone::Resblock] {
                    cells.push(AblationCell {
                        autoencoder,
                        discriminator,
                        backbone,
                    });
                }
            }
        }
        cells
    }

    pub fn label(&self) -> String {
        let base = if self.autoencoder { "Auto Encoder" } else { "VAE" };
        let disc = if self.discriminator { "+Discriminator" } else { "" };
        let bb = match self.backbone {
            Backbone::Mbconv => "MBConv",
            Backbone::Resblock => "ResBlock",
        };
        format!("{base}{disc}+{bb}")
    }

    pub fn slug(&self) -> String {
        format!(
            "{}-{}-{}",
            if self.autoencoder { "ae" } else { "vae" },
            if self.discriminator { "disc" } else { "nodisc" },
            self.backbone.as_str()
        )
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        cfg.training.autoencoder = self.autoencoder;
        cfg.training.use_discriminator = self.discriminator;
        cfg.model.backbone = self.backbone;
    }
}

/// Scores of one finished ablation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellScores {
    pub mean_accuracy: f64,
    /// `(attribute, F)` in configured order.
    pub fairness: Vec<(String, f64)>,
    pub discriminator_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub dir: PathBuf,
    pub outcome: std::result::Result<CellScores, String>,
}

/// Every grid cell with its outcome plus the rendered comparison tables.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub attributes: Vec<String>,
    pub rows: Vec<AblationRow>,
    pub table: String,
    pub csv: String,
}

/// Train, evaluate and audit every grid cell on one shared dataset and seed.
/// Each cell lives in `out/cells/<slug>` with its own `config.toml`; failed
/// cells are reported in the table instead of stopping the grid.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationReport> {
    cfg.validate()?;
    cfg.save_to(&cfg.out)?;
    let sources = prepare_data(cfg, &cfg.out)?;
    let mut rows = Vec::new();
    for cell in AblationCell::grid() {
        let mut c = cfg.clone();
        cell.apply(&mut c);
        c.out = cfg.out.join(CELLS_DIR).join(cell.slug());
        log::info!("ablation cell {}", cell.label());
        let outcome = run_cell(&c, &sources).map_err(|e| format!("exit {}: {e}", e.exit_code()));
        if let Err(msg) = &outcome {
            log::warn!("ablation cell {} failed: {msg}", cell.label());
        }
        rows.push(AblationRow {
            cell,
            dir: c.out,
            outcome,
        });
    }
    let attributes = cfg.metrics.attributes.clone();
    let table = render_ablation_table(&attributes, &rows, cfg.training.seed);
    let csv = render_ablation_csv(&attributes, &rows);
    for (name, body) in [(ABLATION_TABLE, &table), (ABLATION_CSV, &csv)] {
        let path = cfg.out.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(AblationReport {
        attributes,
        rows,
        table,
        csv,
    })
}

fn run_cell(cfg: &RunConfig, sources: &DataSources) -> Result<CellScores> {
    cfg.validate()?;
    cfg.save_to(&cfg.out)?;
    train_with(cfg, sources)?;
    let best = cfg.out.join(BEST_CHECKPOINT);
    let (preds, dacc) = match cfg.training.precision {
        DType::F32 => eval_typed::<f32>(cfg, sources, &best)?,
        DType::F64 => eval_typed::<f64>(cfg, sources, &best)?,
    };
    write_predictions(&cfg.out.join(PREDICTIONS_FILE), &preds)?;
    let reports = audit_predictions(&preds, &cfg.metrics)?;
    write_reports(&cfg.out, &reports)?;
    Ok(CellScores {
        mean_accuracy: reports[0].mean_accuracy,
        fairness: reports.iter().map(|r| (r.attribute.clone(), r.fairness.score)).collect(),
        discriminator_accuracy: dacc,
    })
}

fn render_ablation_table(attributes: &[String], rows: &[AblationRow], seed: u64) -> String {
    let method_w = rows.iter().map(|r| r.cell.label().len()).max().unwrap_or(6).max(6);
    let mut header = vec![format!("{:<method_w$}", "Method"), format!("{:>12}", "Mean acc (%)")];
    header.extend(attributes.iter().map(|a| format!("{:>12}", format!("F {a} (%)"))));
    header.push(format!("{:>12}", "D acc (%)"));
    let header = header.join(" | ");
    let mut out = format!("Component-wise ablation (seed {seed})\n{header}\n{}\n", "-".repeat(header.len()));
    for row in rows {
        let mut cols = vec![format!("{:<method_w$}", row.cell.label())];
        match &row.outcome {
            Ok(s) => {
                cols.push(format!("{:>12.2}", 100.0 * s.mean_accuracy));
                cols.extend(s.fairness.iter().map(|(_, f)| format!("{:>12.2}", 100.0 * f)));
                cols.push(format!("{:>12.2}", 100.0 * s.discriminator_accuracy));
            }
            Err(msg) => cols.push(format!("FAILED ({msg})")),
        }
        out.push_str(cols.join(" | ").trim_end());
        out.push('\n');
    }
    out
}

fn render_ablation_csv(attributes: &[String], rows: &[AblationRow]) -> String {
    let mut out = String::from("method,status,mean_accuracy");
    for a in attributes {
        out.push_str(&format!(",fairness:{a}"));
    }
    out.push_str(",discriminator_accuracy\n");
    for row in rows {
        match &row.outcome {
            Ok(s) => {
                out.push_str(&format!("{},ok,{:.6}", row.cell.label(), s.mean_accuracy));
                for (_, f) in &s.fairness {
                    out.push_str(&format!(",{f:.6}"));
                }
                out.push_str(&format!(",{:.6}\n", s.discriminator_accuracy));
            }
            Err(msg) => {
                let msg = msg.replace(['"', '\n'], " ");
                out.push_str(&format!("{},\"failed: {msg}\",", row.cell.label()));
                out.push_str(&",".repeat(attributes.len() + 1));
                out.push('\n');
            }
        }
    }
    out
}
