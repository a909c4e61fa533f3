//! ROC/AUC, confusion counts and derived rates. Fraud is the positive class
//! and higher scores mean "more anomalous".

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{open, write_file, Labels};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples with `score >= threshold` are predicted fraud. The first
    /// point uses `+inf`.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Ordered by threshold, descending.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn check_lengths(n_scores: usize, labels: &Labels) -> Result<()> {
    if n_scores != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: n_scores,
        });
    }
    Ok(())
}

/// Sweeps a threshold over the distinct scores. Tied scores form one step,
/// which credits each tied positive/negative pair with one half.
pub fn roc_auc<T: Scalar>(scores: &[T], labels: &Labels) -> Result<RocCurve> {
    check_lengths(scores.len(), labels)?;
    let y = labels.values();
    let positives = y.iter().filter(|&&l| l == 1).count() as u64;
    let negatives = y.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Data("AUC undefined: labels contain a single class".into()));
    }
    let s: Vec<f64> = scores.iter().map(|v| v.as_f64()).collect();
    if let Some(i) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("score {i} is not finite")));
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area in units of one (positive, negative) pair.
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let threshold = s[order[i]];
        let (tp_before, fp_before) = (tp, fp);
        while i < order.len() && s[order[i]] == threshold {
            if y[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += u128::from(fp - fp_before) * u128::from(tp + tp_before);
        points.push(RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            threshold,
        });
    }
    let auc = twice_area as f64 / (2.0 * positives as f64 * negatives as f64);
    Ok(RocCurve { points, auc })
}

/// Trapezoidal area under `(fpr, tpr)` points in the given order.
pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Writes `fpr,tpr,threshold` rows; the leading sentinel threshold is `inf`.
pub fn export_roc(curve: &RocCurve, path: &Path) -> Result<()> {
    if curve.points.is_empty() {
        return Err(Error::Data("cannot export an empty ROC curve".into()));
    }
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in &curve.points {
        writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold).expect("write to String");
    }
    write_file(path, out.as_bytes())
}

/// Reads a curve written by [`export_roc`] and re-integrates its AUC.
pub fn import_roc(path: &Path) -> Result<RocCurve> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Data(format!("bad ROC row {:?}", record)))
        };
        points.push(RocPoint {
            fpr: field(0)?,
            tpr: field(1)?,
            threshold: field(2)?,
        });
    }
    if points.is_empty() {
        return Err(Error::Data(format!("{} holds no ROC points", path.display())));
    }
    let auc = trapezoid_auc(&points);
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `tp / (tp + fp)`, or `None` when nothing was flagged.
    pub fn precision(&self) -> Option<f64> {
        let flagged = self.tp + self.fp;
        (flagged > 0).then(|| self.tp as f64 / flagged as f64)
    }

    /// `tp / (tp + fn)`, or `None` without positives.
    pub fn recall(&self) -> Option<f64> {
        let actual = self.tp + self.fn_;
        (actual > 0).then(|| self.tp as f64 / actual as f64)
    }

    /// Harmonic mean of precision and recall, with undefined rates as 0.
    pub fn f1(&self) -> f64 {
        let p = self.precision().unwrap_or(0.0);
        let r = self.recall().unwrap_or(0.0);
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

pub fn confusion(is_fraud: &[bool], labels: &Labels) -> Result<ConfusionMatrix> {
    check_lengths(is_fraud.len(), labels)?;
    let mut m = ConfusionMatrix::default();
    for (&flag, &label) in is_fraud.iter().zip(labels.values()) {
        match (flag, label == 1) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, false) => m.tn += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    Ok(m)
}

/// Hard decisions and the threshold/rule that produced them.
#[derive(Debug, Clone, Copy)]
pub struct Flagging<'a> {
    pub is_fraud: &'a [bool],
    pub threshold: f64,
    pub rule: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub model: String,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
    pub threshold: f64,
    pub rule: String,
    /// Set when nothing was flagged and precision is reported as 0.
    pub degenerate_precision: bool,
}

pub fn metrics_report<T: Scalar>(
    model: &str,
    scores: &[T],
    labels: &Labels,
    flagging: Flagging<'_>,
) -> Result<MetricsReport> {
    let roc = roc_auc(scores, labels)?;
    let counts = confusion(flagging.is_fraud, labels)?;
    Ok(MetricsReport {
        format_version: FORMAT_VERSION,
        model: model.to_string(),
        auc: roc.auc,
        precision: counts.precision().unwrap_or(0.0),
        recall: counts.recall().unwrap_or(0.0),
        f1: counts.f1(),
        confusion: counts,
        threshold: flagging.threshold,
        rule: flagging.rule.to_string(),
        degenerate_precision: counts.precision().is_none(),
    })
}

/// Aligned plain-text table, one row per model: AUC, precision, recall, F1.
pub fn comparison_table(reports: &[MetricsReport]) -> String {
    let width = reports.iter().map(|r| r.model.len()).max().unwrap_or(0).max("Model".len());
    let mut out = format!(
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}\n",
        "Model", "AUC", "Precision", "Recall", "F1"
    );
    for r in reports {
        let precision = if r.degenerate_precision {
            format!("{:.4}*", r.precision)
        } else {
            format!("{:.4}", r.precision)
        };
        writeln!(
            out,
            "{:<width$}  {:>9.4}  {:>9}  {:>9.4}  {:>9.4}",
            r.model, r.auc, precision, r.recall, r.f1
        )
        .expect("write to String");
    }
    if reports.iter().any(|r| r.degenerate_precision) {
        out.push_str("* no samples flagged; precision undefined and shown as 0\n");
    }
    out
}
