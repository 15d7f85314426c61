//! Confusion matrices and the accuracy / precision / sensitivity / F1
//! report, in percent.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// Rows are true classes, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// One-vs-rest `(TP, FP, FN, TN)` for `class`.
    pub fn one_vs_rest(&self, class: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[class][class];
        let predicted: u64 = self.counts.iter().map(|r| r[class]).sum();
        let actual: u64 = self.counts[class].iter().sum();
        let (fp, fn_) = (predicted - tp, actual - tp);
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }
}

/// Per-class values; `None` where the denominator is zero.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: Option<f64>,
    pub macro_sensitivity: Option<f64>,
    pub macro_f1: Option<f64>,
    pub warnings: Vec<String>,
}

fn ratio(num: u64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| 100.0 * num as f64 / den)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Accuracy `trace / total`; per class precision `TP/(TP+FP)`, sensitivity
/// `TP/(TP+FN)`, F1 `TP/(TP + (FP+FN)/2)`; unweighted macro means over the
/// classes where each value is defined.
pub fn metrics(cm: &ConfusionMatrix, class_names: &[String]) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("metrics of an empty confusion matrix"));
    }
    let k = cm.classes();
    let names: Vec<String> = if class_names.len() == k {
        class_names.to_vec()
    } else {
        (0..k).map(|i| format!("class {i}")).collect()
    };
    let mut warnings = Vec::new();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let (tp, fp, fn_, _) = cm.one_vs_rest(c);
            let m = ClassMetrics {
                precision: ratio(tp, (tp + fp) as f64),
                sensitivity: ratio(tp, (tp + fn_) as f64),
                f1: ratio(tp, tp as f64 + (fp + fn_) as f64 / 2.0),
            };
            for (what, v) in [("precision", m.precision), ("sensitivity", m.sensitivity), ("F1", m.f1)] {
                if v.is_none() {
                    warnings.push(format!(
                        "{} {what} undefined (zero denominator); excluded from macro mean",
                        names[c]
                    ));
                }
            }
            m
        })
        .collect();
    Ok(MetricsReport {
        accuracy: 100.0 * cm.trace() as f64 / total as f64,
        macro_precision: mean_defined(per_class.iter().map(|m| m.precision)),
        macro_sensitivity: mean_defined(per_class.iter().map(|m| m.sensitivity)),
        macro_f1: mean_defined(per_class.iter().map(|m| m.f1)),
        class_names: names,
        per_class,
        warnings,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

impl MetricsReport {
    /// Table with columns Class, Accuracy, Precision, Sensitivity, F1-Score.
    pub fn to_table(&self) -> String {
        let width = self.class_names.iter().map(String::len).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>9}  {:>11}  {:>8}",
            "Class", "Accuracy", "Precision", "Sensitivity", "F1-Score"
        );
        for (name, m) in self.class_names.iter().zip(&self.per_class) {
            let _ = writeln!(
                out,
                "{name:<width$}  {:>8}  {:>9}  {:>11}  {:>8}",
                "n/a",
                cell(m.precision),
                cell(m.sensitivity),
                cell(m.f1)
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.2}  {:>9}  {:>11}  {:>8}",
            "Average",
            self.accuracy,
            cell(self.macro_precision),
            cell(self.macro_sensitivity),
            cell(self.macro_f1)
        );
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
