use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::{cmd_ablate, cmd_audit, cmd_eval, cmd_synth, cmd_train, RunConfig, REPORT_TABLE};
use crate::error::Result;
use crate::losses::AdversarialForm;
use crate::metrics::{render_report, ReportFormat};
use crate::model::Backbone;

#[derive(Debug, Parser)]
#[command(name = "fairalign", version, about = "Latent-alignment debiasing and fairness auditing for expression classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the biased synthetic dataset into --out.
    Synth(Overrides),
    /// Train the autoencoder phase, then the classifier.
    Train(Overrides),
    /// Write test-split predictions of a checkpoint.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fairness reports for a predictions table.
    Audit {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Train and audit the 8-cell ablation grid.
    Ablate(Overrides),
}

/// Flags shared by every command; each one overrides a single config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run config; built-in desk defaults when absent.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// training.seed
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// out
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// metrics.attributes (repeatable; `a*b` for an intersection)
    #[arg(long = "attribute", value_name = "NAME")]
    pub attributes: Vec<String>,
    /// training.use_discriminator = false
    #[arg(long)]
    pub no_discriminator: bool,
    /// training.autoencoder = true
    #[arg(long)]
    pub autoencoder: bool,
    /// model.backbone: mbconv | resblock
    #[arg(long, value_name = "BACKBONE")]
    pub backbone: Option<Backbone>,
    /// training.adversarial_form: confusion | negated
    #[arg(long, value_name = "FORM")]
    pub adversarial: Option<AdversarialForm>,
}

impl Overrides {
    /// Config file (or defaults) with every given flag applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.training.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if !self.attributes.is_empty() {
            cfg.metrics.attributes = self.attributes.clone();
        }
        if self.no_discriminator {
            cfg.training.use_discriminator = false;
        }
        if self.autoencoder {
            cfg.training.autoencoder = true;
        }
        if let Some(b) = self.backbone {
            cfg.model.backbone = b;
        }
        if let Some(a) = self.adversarial {
            cfg.training.adversarial_form = a;
        }
        cfg.absolutize()?;
        Ok(cfg)
    }
}

/// Parse `args` and run the command. Returns the process exit status:
/// 0 on success, 1 for invalid input, 2 for runtime aborts.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(o) => {
            let out = cmd_synth(&o.resolve()?)?;
            println!(
                "wrote {} train and {} test records: {} {}",
                out.train.len(),
                out.test.len(),
                out.train_manifest.display(),
                out.test_manifest.display()
            );
        }
        Command::Train(o) => {
            let s = cmd_train(&o.resolve()?)?;
            let score = if s.best_score.is_finite() {
                format!("validation score {:.4}", s.best_score)
            } else {
                "no validation split".to_string()
            };
            println!(
                "trained {} steps; best classifier epoch {} ({score}) in {}",
                s.final_step,
                s.best_epoch,
                s.dir.display()
            );
        }
        Command::Eval { overrides, checkpoint } => {
            let cfg = overrides.resolve()?;
            let preds = cmd_eval(&cfg, &checkpoint)?;
            println!("wrote {} predictions to {}", preds.len(), cfg.out.join(super::PREDICTIONS_FILE).display());
        }
        Command::Audit { overrides, predictions } => {
            let cfg = overrides.resolve()?;
            let reports = cmd_audit(&cfg, &predictions)?;
            print!("{}", render_report(&reports, ReportFormat::Table));
            log::info!("report written to {}", cfg.out.join(REPORT_TABLE).display());
        }
        Command::Ablate(o) => {
            let report = cmd_ablate(&o.resolve()?)?;
            print!("{}", report.table);
        }
    }
    Ok(())
}
