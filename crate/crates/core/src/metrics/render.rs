use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::FairnessReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(crate::Error::config("format", format!("expected table|csv, got `{other}`"))),
        }
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), pct)
}

/// Expression-wise accuracy, per-group class-wise accuracy and fairness for
/// every report.
pub fn render_report(reports: &[FairnessReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => render_table(reports),
        ReportFormat::Csv => render_csv(reports),
    }
}

fn render_table(reports: &[FairnessReport]) -> String {
    let mut out = String::new();
    let mut notes: Vec<String> = Vec::new();
    for r in reports {
        let c = r.matrix.num_classes;
        let _ = writeln!(out, "Expression-wise accuracy (%) [{}]", r.attribute);
        let _ = writeln!(out, "{:<10}{:>10}{:>12}", "class", "support", "accuracy");
        for k in 0..c {
            let _ = writeln!(out, "{:<10}{:>10}{:>12}", k, r.class_support[k], cell(r.class_accuracy[k]));
        }
        let _ = writeln!(out, "{:<10}{:>10}{:>12}", "mean", r.class_support.iter().sum::<usize>(), pct(r.mean_accuracy));
        out.push('\n');

        let _ = writeln!(out, "Mean class-wise accuracy (%) by {}", r.attribute);
        let width = r.matrix.groups.iter().map(String::len).max().unwrap_or(5).max(5) + 2;
        let _ = write!(out, "{:<width$}{:>10}", "group", "mean");
        for k in 0..c {
            let _ = write!(out, "{:>9}", format!("c{k}"));
        }
        out.push('\n');
        for (g, name) in r.matrix.groups.iter().enumerate() {
            let _ = write!(out, "{:<width$}{:>10}", name, pct(r.group_accuracy[g]));
            for k in 0..c {
                let text = match r.matrix.recall[g][k] {
                    Some(v) => pct(v),
                    None => {
                        notes.push(format!("{}={}: class {} has no test samples", r.attribute, name, k));
                        format!("n/a[{}]", notes.len())
                    }
                };
                let _ = write!(out, "{text:>9}");
            }
            out.push('\n');
        }
        for d in &r.dropped_groups {
            notes.push(format!("{}={}: no records, group omitted", r.attribute, d));
        }
        out.push('\n');
    }
    let _ = writeln!(out, "Fairness");
    let _ = writeln!(
        out,
        "{:<24}{:>12}{:>10}{:>10}  classes",
        "attribute", "reference", "F", "F (%)"
    );
    for r in reports {
        let classes: Vec<String> = r.fairness.classes.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "{:<24}{:>12}{:>10.4}{:>10}  {}",
            r.attribute,
            r.fairness.reference,
            r.fairness.score,
            pct(r.fairness.score),
            classes.join(",")
        );
    }
    if !notes.is_empty() {
        out.push('\n');
        for (i, n) in notes.iter().enumerate() {
            let _ = writeln!(out, "[{}] {}", i + 1, n);
        }
    }
    out
}

fn render_csv(reports: &[FairnessReport]) -> String {
    let mut out = String::from("table,attribute,group,class,metric,value\n");
    let num = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    for r in reports {
        let a = &r.attribute;
        for k in 0..r.matrix.num_classes {
            let _ = writeln!(out, "expression,{a},,{k},support,{}", r.class_support[k]);
            let _ = writeln!(out, "expression,{a},,{k},accuracy,{}", num(r.class_accuracy[k]));
        }
        let _ = writeln!(out, "expression,{a},,,mean_accuracy,{:.6}", r.mean_accuracy);
        for (g, name) in r.matrix.groups.iter().enumerate() {
            let _ = writeln!(out, "attribute,{a},{name},,mean_accuracy,{:.6}", r.group_accuracy[g]);
            for k in 0..r.matrix.num_classes {
                let _ = writeln!(out, "attribute,{a},{name},{k},support,{}", r.matrix.support[g][k]);
                let _ = writeln!(out, "attribute,{a},{name},{k},recall,{}", num(r.matrix.recall[g][k]));
            }
            let _ = writeln!(out, "fairness,{a},{name},,group_sum,{:.6}", r.fairness.group_sums[g]);
        }
        for d in &r.dropped_groups {
            let _ = writeln!(out, "attribute,{a},{d},,dropped,1");
        }
        let _ = writeln!(out, "fairness,{a},{},,reference,1", r.fairness.reference);
        let _ = writeln!(out, "fairness,{a},,,score,{:.6}", r.fairness.score);
        let _ = writeln!(out, "fairness,{a},,,percent,{:.2}", 100.0 * r.fairness.score);
    }
    out
}
