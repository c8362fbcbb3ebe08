//! Confusion matrix and the five evaluation metrics. SBR is the positive class.

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(predicted: &[Label], actual: &[Label]) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(Error::Size(format!(
            "{} predictions for {} actual labels",
            predicted.len(),
            actual.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, a) in predicted.iter().zip(actual) {
        match (p, a) {
            (Label::Sbr, Label::Sbr) => cm.tp += 1,
            (Label::Sbr, Label::Nsbr) => cm.fp += 1,
            (Label::Nsbr, Label::Sbr) => cm.fn_ += 1,
            (Label::Nsbr, Label::Nsbr) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub fpr: f64,
    pub g_measure: f64,
    pub counts: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of recall and `1 - fpr`; 0 when both are 0.
pub fn g_measure(recall: f64, fpr: f64) -> f64 {
    let spec = 1.0 - fpr;
    if recall + spec == 0.0 {
        0.0
    } else {
        2.0 * recall * spec / (recall + spec)
    }
}

/// Every ratio with a zero denominator is defined as 0.
pub fn compute_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let fpr = ratio(cm.fp, cm.fp + cm.tn);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MetricsReport {
        recall,
        precision,
        f1,
        fpr,
        g_measure: g_measure(recall, fpr),
        counts: *cm,
    }
}
