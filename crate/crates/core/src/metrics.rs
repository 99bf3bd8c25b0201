//! Confusion-matrix metrics, bias, and per-estimator reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::ensemble::{Estimate, EstimatorKind, THRESHOLD};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("the {0} class is absent from the evaluation data")]
    ClassAbsent(&'static str),
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    /// Thresholds `values` at 0.5 and tallies against `truth`.
    pub fn from_values(values: &[f64], truth: &[Label]) -> Result<Self, MetricsError> {
        if values.len() != truth.len() {
            return Err(MetricsError::LengthMismatch {
                predictions: values.len(),
                labels: truth.len(),
            });
        }
        let mut cm = ConfusionMatrix::default();
        for (&v, &y) in values.iter().zip(truth) {
            match (v >= THRESHOLD, y.is_positive()) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, false) => cm.tn += 1,
                (false, true) => cm.fn_ += 1,
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    Ok((cm.tp + cm.tn) as f64 / total as f64)
}

/// Mean of true-positive and true-negative rates.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if cm.tp + cm.fn_ == 0 {
        return Err(MetricsError::ClassAbsent("positive"));
    }
    if cm.tn + cm.fp == 0 {
        return Err(MetricsError::ClassAbsent("negative"));
    }
    // (tp/P + tn/N) / 2 over one common denominator: a single rounding, so
    // the result matches `accuracy` bit for bit when P = N.
    let (p, n) = ((cm.tp + cm.fn_) as u128, (cm.tn + cm.fp) as u128);
    let num = cm.tp as u128 * n + cm.tn as u128 * p;
    Ok(num as f64 / (2 * p * n) as f64)
}

/// Signed bias `(est_pos - true_pos) / n_target`; positive means
/// overestimation.
pub fn bias(est_pos: f64, true_pos: u64, n_target: u64) -> Result<f64, MetricsError> {
    if n_target == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    Ok((est_pos - true_pos as f64) / n_target as f64)
}

/// One report row. Ground-truth fields are absent when no labels were
/// available for the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub kind: EstimatorKind,
    pub n_target: u64,
    pub est_pos: f64,
    pub est_prevalence: f64,
    /// Number of actual positives in the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tp: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balanced_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    /// Mean calibrated prevalence over the members that calibrated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrated_pi: Option<f64>,
}

/// Rows in estimator order (label count, raw sum, calibrated, ensemble),
/// whatever the input order.
pub fn build_report(
    estimates: &[Estimate],
    truth: Option<&[Label]>,
) -> Result<Vec<MethodReport>, MetricsError> {
    let mut ordered: Vec<&Estimate> = estimates.iter().collect();
    ordered.sort_by_key(|e| e.kind);
    ordered
        .into_iter()
        .map(|e| {
            let n = e.per_doc.len() as u64;
            if n == 0 {
                return Err(MetricsError::EmptyEvaluation);
            }
            let calibrated_pi = (!e.prevalences.is_empty()).then(|| {
                e.prevalences.iter().map(|p| p.pi).sum::<f64>() / e.prevalences.len() as f64
            });
            let mut row = MethodReport {
                kind: e.kind,
                n_target: n,
                est_pos: e.est_pos,
                est_prevalence: e.est_pos / n as f64,
                tp: None,
                bias: None,
                accuracy: None,
                balanced_accuracy: None,
                confusion: None,
                calibrated_pi,
            };
            if let Some(truth) = truth {
                let cm = ConfusionMatrix::from_values(&e.per_doc, truth)?;
                let positives = truth.iter().filter(|y| y.is_positive()).count() as u64;
                row.tp = Some(positives);
                row.bias = Some(bias(e.est_pos, positives, n)?);
                row.accuracy = Some(accuracy(&cm)?);
                row.balanced_accuracy = balanced_accuracy(&cm).ok();
                row.confusion = Some(cm);
            }
            Ok(row)
        })
        .collect()
}

/// Two-column `kind,bias` series; rows without a bias are skipped.
pub fn bias_series_csv(rows: &[MethodReport]) -> String {
    let mut out = String::from("kind,bias\n");
    for r in rows {
        if let Some(b) = r.bias {
            out.push_str(&format!("{},{}\n", r.kind, b));
        }
    }
    out
}
