//! Confusion counts with RISK as the positive class, and precision, recall
//! and f1. Zero denominators yield 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion_counts(predictions: &[bool], labels: &[bool]) -> Result<Confusion> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "confusion_counts",
            format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            ),
        ));
    }
    let mut c = Confusion::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall (0 when both are 0).
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

/// `(precision, recall, f1)`
pub fn prf1(c: &Confusion) -> (f64, f64, f64) {
    let precision = ratio(c.tp as f64, (c.tp + c.fp) as f64);
    let recall = ratio(c.tp as f64, (c.tp + c.fn_) as f64);
    (precision, recall, f1_score(precision, recall))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(flatten)]
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn from_confusion(confusion: Confusion) -> Self {
        let (precision, recall, f1) = prf1(&confusion);
        Metrics {
            confusion,
            precision,
            recall,
            f1,
        }
    }

    pub fn from_predictions(predictions: &[bool], labels: &[bool]) -> Result<Self> {
        Ok(Self::from_confusion(confusion_counts(predictions, labels)?))
    }

    /// Copy with precision, recall and f1 rounded to four decimals.
    pub fn rounded(&self) -> Self {
        Metrics {
            precision: round4(self.precision),
            recall: round4(self.recall),
            f1: round4(self.f1),
            ..*self
        }
    }
}

pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}
