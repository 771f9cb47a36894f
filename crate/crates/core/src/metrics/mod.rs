//! Equal-odds fairness, class-wise accuracies and report rendering over a
//! table of predictions.

mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PRODUCT_SEPARATOR;
use crate::error::{Error, Result};

pub use render::{render_report, ReportFormat};

/// One evaluated record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub id: String,
    #[serde(rename = "true")]
    pub truth: usize,
    pub pred: usize,
    pub attrs: BTreeMap<String, String>,
}

impl Prediction {
    /// Value of `attribute`, joining components for `a*b` names not stored directly.
    pub fn attr_value(&self, attribute: &str) -> Option<String> {
        if let Some(v) = self.attrs.get(attribute) {
            return Some(v.clone());
        }
        let parts: Option<Vec<&str>> = attribute
            .split(PRODUCT_SEPARATOR)
            .map(|p| self.attrs.get(p).map(String::as_str))
            .collect();
        match parts {
            Some(p) if p.len() > 1 => Some(p.join(&PRODUCT_SEPARATOR.to_string())),
            _ => None,
        }
    }
}

/// One JSON object per line, in table order.
pub fn predictions_to_string(preds: &[Prediction]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_predictions(text: &str, origin: &str) -> Result<Vec<Prediction>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    std::fs::write(path, predictions_to_string(preds)).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, &path.display().to_string())
}

/// Per-group, per-class recall with support counts. Cells without support
/// are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallMatrix {
    pub attribute: String,
    pub groups: Vec<String>,
    pub num_classes: usize,
    pub recall: Vec<Vec<Option<f64>>>,
    pub support: Vec<Vec<usize>>,
}

impl RecallMatrix {
    /// Build from explicit recalls; `support[g][c] == 0` must coincide with `None`.
    pub fn from_recalls(
        attribute: impl Into<String>,
        groups: Vec<String>,
        recall: Vec<Vec<Option<f64>>>,
        support: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let num_classes = recall.first().map_or(0, Vec::len);
        if groups.len() != recall.len() || groups.len() != support.len() {
            return Err(Error::Shape("one recall row and support row per group".into()));
        }
        for (r, s) in recall.iter().zip(&support) {
            if r.len() != num_classes || s.len() != num_classes {
                return Err(Error::Shape("ragged recall matrix".into()));
            }
            for (v, &n) in r.iter().zip(s) {
                match v {
                    Some(x) if n > 0 && (0.0..=1.0).contains(x) => {}
                    None if n == 0 => {}
                    _ => return Err(Error::Invalid(format!("cell {v:?} with support {n}"))),
                }
            }
        }
        Ok(RecallMatrix {
            attribute: attribute.into(),
            groups,
            num_classes,
            recall,
            support,
        })
    }

    /// Classes with support in every group, ascending.
    pub fn shared_classes(&self) -> Vec<usize> {
        (0..self.num_classes)
            .filter(|&c| self.support.iter().all(|s| s[c] > 0))
            .collect()
    }
}

/// Distinct class count implied by a table: one more than the largest label seen.
pub fn infer_num_classes(preds: &[Prediction]) -> usize {
    preds.iter().map(|p| p.truth.max(p.pred) + 1).max().unwrap_or(0)
}

/// Tally recalls for every observed value of `attribute` (sorted by name).
pub fn recall_matrix(preds: &[Prediction], attribute: &str, num_classes: Option<usize>) -> Result<RecallMatrix> {
    if preds.is_empty() {
        return Err(Error::Invalid("empty predictions table".into()));
    }
    let c = num_classes.unwrap_or_else(|| infer_num_classes(preds));
    let values: Vec<String> = preds
        .iter()
        .map(|p| p.attr_value(attribute).ok_or_else(|| Error::UnknownAttribute(attribute.to_string())))
        .collect::<Result<_>>()?;
    let groups: Vec<String> = values.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let gi: BTreeMap<&str, usize> = groups.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
    let mut support = vec![vec![0usize; c]; groups.len()];
    let mut correct = vec![vec![0usize; c]; groups.len()];
    for (p, v) in preds.iter().zip(&values) {
        if p.truth >= c || p.pred >= c {
            return Err(Error::LabelOutOfRange {
                record: p.id.clone(),
                label: p.truth.max(p.pred),
                num_classes: c,
            });
        }
        let g = gi[v.as_str()];
        support[g][p.truth] += 1;
        if p.pred == p.truth {
            correct[g][p.truth] += 1;
        }
    }
    let recall = correct
        .iter()
        .zip(&support)
        .map(|(k, n)| {
            k.iter()
                .zip(n)
                .map(|(&k, &n)| (n > 0).then(|| k as f64 / n as f64))
                .collect()
        })
        .collect();
    Ok(RecallMatrix {
        attribute: attribute.to_string(),
        groups,
        num_classes: c,
        recall,
        support,
    })
}

/// Min-ratio fairness and the reference group it is measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct Fairness {
    pub score: f64,
    pub reference: String,
    /// Recall sums over `classes`, one per group.
    pub group_sums: Vec<f64>,
    pub classes: Vec<usize>,
}

/// `F = min_i S_i / S_d` where `S_i` sums recalls over the classes supported
/// in every group and `d` maximizes `S` (ties: smallest group name).
pub fn fairness_score(m: &RecallMatrix) -> Result<Fairness> {
    if m.groups.is_empty() {
        return Err(Error::Invalid("no groups".into()));
    }
    if let Some(g) = m.support.iter().position(|s| s.iter().all(|&n| n == 0)) {
        return Err(Error::Invalid(format!("group `{}` has no defined cells", m.groups[g])));
    }
    let classes = m.shared_classes();
    if classes.is_empty() {
        return Err(Error::Invalid("no class is supported in every group".into()));
    }
    let sums: Vec<f64> = m
        .recall
        .iter()
        .map(|r| classes.iter().map(|&c| r[c].expect("shared class is defined")).sum())
        .collect();
    let (score, reference) = fairness_from_sums(&m.groups, &sums)?;
    Ok(Fairness {
        score,
        reference: m.groups[reference].clone(),
        group_sums: sums,
        classes,
    })
}

/// Min-ratio over explicit group sums; returns `(F, index of d)`.
pub fn fairness_from_sums(names: &[String], sums: &[f64]) -> Result<(f64, usize)> {
    if names.len() != sums.len() || sums.is_empty() {
        return Err(Error::Shape("one sum per group".into()));
    }
    let mut d = 0;
    for i in 1..sums.len() {
        if sums[i] > sums[d] || (sums[i] == sums[d] && names[i] < names[d]) {
            d = i;
        }
    }
    if sums[d] <= 0.0 {
        return Err(Error::Invalid(format!("reference group `{}` has zero recall", names[d])));
    }
    let f = sums.iter().map(|s| s / sums[d]).fold(f64::INFINITY, f64::min);
    Ok((f, d))
}

/// Macro average of the defined recalls of each group.
pub fn mean_classwise_accuracy(m: &RecallMatrix) -> Result<Vec<f64>> {
    m.recall
        .iter()
        .zip(&m.groups)
        .map(|(r, g)| {
            let defined: Vec<f64> = r.iter().flatten().copied().collect();
            if defined.is_empty() {
                Err(Error::Invalid(format!("group `{g}` has no defined cells")))
            } else {
                Ok(defined.iter().sum::<f64>() / defined.len() as f64)
            }
        })
        .collect()
}

/// Everything reported for one protected attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessReport {
    pub attribute: String,
    pub matrix: RecallMatrix,
    pub fairness: Fairness,
    pub group_accuracy: Vec<f64>,
    /// Recall per class over all records, `None` without support.
    pub class_accuracy: Vec<Option<f64>>,
    pub class_support: Vec<usize>,
    /// Macro average of `class_accuracy`.
    pub mean_accuracy: f64,
    /// Declared groups absent from the table.
    pub dropped_groups: Vec<String>,
}

pub fn fairness_report(preds: &[Prediction], attribute: &str, num_classes: Option<usize>) -> Result<FairnessReport> {
    let c = num_classes.unwrap_or_else(|| infer_num_classes(preds));
    let matrix = recall_matrix(preds, attribute, Some(c))?;
    let fairness = fairness_score(&matrix)?;
    let group_accuracy = mean_classwise_accuracy(&matrix)?;
    let mut support = vec![0usize; c];
    let mut correct = vec![0usize; c];
    for p in preds {
        support[p.truth] += 1;
        correct[p.truth] += usize::from(p.pred == p.truth);
    }
    let class_accuracy: Vec<Option<f64>> = correct
        .iter()
        .zip(&support)
        .map(|(&k, &n)| (n > 0).then(|| k as f64 / n as f64))
        .collect();
    let defined: Vec<f64> = class_accuracy.iter().flatten().copied().collect();
    let mean_accuracy = defined.iter().sum::<f64>() / defined.len().max(1) as f64;
    Ok(FairnessReport {
        attribute: attribute.to_string(),
        matrix,
        fairness,
        group_accuracy,
        class_accuracy,
        class_support: support,
        mean_accuracy,
        dropped_groups: Vec::new(),
    })
}

/// Report over the product of two attributes. `declared` lists the full
/// value sets when known so that empty product groups can be named.
pub fn intersectional_report(
    preds: &[Prediction],
    attrs: (&str, &str),
    declared: Option<(&[String], &[String])>,
    num_classes: Option<usize>,
) -> Result<FairnessReport> {
    let name = format!("{}{PRODUCT_SEPARATOR}{}", attrs.0, attrs.1);
    let mut report = fairness_report(preds, &name, num_classes)?;
    if report.matrix.groups.len() < 2 {
        return Err(Error::Invalid(format!("`{name}` has fewer than 2 non-empty groups")));
    }
    if let Some((a, b)) = declared {
        let present: BTreeSet<&String> = report.matrix.groups.iter().collect();
        report.dropped_groups = a
            .iter()
            .flat_map(|x| b.iter().map(move |y| format!("{x}{PRODUCT_SEPARATOR}{y}")))
            .filter(|g| !present.contains(g))
            .collect();
        for g in &report.dropped_groups {
            log::warn!("intersectional group `{g}` has no records and is dropped");
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
