use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Vae,
    Clf,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Vae => "vae",
            Phase::Clf => "clf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vae" => Some(Phase::Vae),
            "clf" => Some(Phase::Clf),
            _ => None,
        }
    }
}

/// Named scalars recorded at one optimizer step or at the end of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub index: u64,
    pub phase: Phase,
    pub values: Vec<(String, f64)>,
}

impl LogRecord {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Step and epoch scalars of a run.
///
/// Serialized one scalar per line as `kind<TAB>index<TAB>phase<TAB>name<TAB>value`,
/// with `kind` either `step` or `epoch` and values printed in shortest
/// round-trip form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub steps: Vec<LogRecord>,
    pub epochs: Vec<LogRecord>,
}

impl TrainingLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a step record; steps must strictly increase.
    pub fn step(&mut self, step: u64, phase: Phase, values: Vec<(String, f64)>) -> Result<()> {
        if let Some(last) = self.steps.last() {
            if step <= last.index {
                return Err(Error::Invalid(format!("log step {step} after {}", last.index)));
            }
        }
        self.steps.push(LogRecord { index: step, phase, values });
        Ok(())
    }

    pub fn epoch(&mut self, epoch: u64, phase: Phase, values: Vec<(String, f64)>) {
        self.epochs.push(LogRecord { index: epoch, phase, values });
    }

    pub fn last_step(&self) -> u64 {
        self.steps.last().map_or(0, |r| r.index)
    }

    pub fn extend(&mut self, other: TrainingLog) -> Result<()> {
        for r in other.steps {
            self.step(r.index, r.phase, r.values)?;
        }
        self.epochs.extend(other.epochs);
        Ok(())
    }

    /// Values of `name` across the step records of `phase`.
    pub fn series(&self, phase: Phase, name: &str) -> Vec<f64> {
        self.steps.iter().filter(|r| r.phase == phase).filter_map(|r| r.get(name)).collect()
    }

    pub fn epoch_series(&self, phase: Phase, name: &str) -> Vec<f64> {
        self.epochs.iter().filter(|r| r.phase == phase).filter_map(|r| r.get(name)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (kind, records) in [("step", &self.steps), ("epoch", &self.epochs)] {
            for r in records {
                for (name, v) in &r.values {
                    let _ = writeln!(out, "{kind}\t{}\t{}\t{name}\t{v:?}", r.index, r.phase.as_str());
                }
            }
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut log = TrainingLog::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: m.to_string(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 tab-separated fields"));
            }
            let index: u64 = f[1].parse().map_err(|_| bad("bad index"))?;
            let phase = Phase::parse(f[2]).ok_or_else(|| bad("bad phase"))?;
            let value: f64 = f[4].parse().map_err(|_| bad("bad value"))?;
            let records = match f[0] {
                "step" => &mut log.steps,
                "epoch" => &mut log.epochs,
                _ => return Err(bad("kind must be step or epoch")),
            };
            match records.last_mut() {
                Some(r) if r.index == index && r.phase == phase => r.values.push((f[3].to_string(), value)),
                _ => {
                    if f[0] == "step" && records.last().is_some_and(|r| r.index >= index) {
                        return Err(bad("steps must increase"));
                    }
                    records.push(LogRecord {
                        index,
                        phase,
                        values: vec![(f[3].to_string(), value)],
                    })
                }
            }
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}
