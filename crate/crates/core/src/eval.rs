//! Confusion counts and the derived metrics. Class 1 (non-misleading) is the
//! positive class.

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn n(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    /// True when one class has no support, so one of TPR/TNR is undefined.
    pub fn has_zero_support(&self) -> bool {
        self.positives() == 0 || self.negatives() == 0
    }
}

pub fn confusion(preds: &[Label], truth: &[Label]) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::config(format!(
            "prediction/truth length mismatch: {} vs {}",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::config("cannot score an empty prediction set"));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in preds.iter().zip(truth) {
        match (p, t) {
            (Label::NonMisleading, Label::NonMisleading) => cm.tp += 1,
            (Label::Misinformation, Label::Misinformation) => cm.tn += 1,
            (Label::NonMisleading, Label::Misinformation) => cm.fp += 1,
            (Label::Misinformation, Label::NonMisleading) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

fn rate(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(TPR + TNR) / 2`; a rate over zero support counts as 0 (see
/// [`ConfusionMatrix::has_zero_support`]).
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> f64 {
    0.5 * (rate(cm.tp, cm.positives()) + rate(cm.tn, cm.negatives()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Accuracy {
    pub f1: f64,
    pub accuracy: f64,
    /// Precision or recall has a zero denominator (no predicted or no actual
    /// positives). F1 is then 0 by the formula, or by definition when
    /// `2tp + fp + fn == 0`.
    pub f1_degenerate: bool,
}

pub fn f1_and_accuracy(cm: &ConfusionMatrix) -> F1Accuracy {
    let den = 2 * cm.tp + cm.fp + cm.fn_;
    F1Accuracy {
        f1: rate(2 * cm.tp, den),
        accuracy: rate(cm.tp + cm.tn, cm.n()),
        f1_degenerate: cm.tp + cm.fp == 0 || cm.positives() == 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ba: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub n: u64,
    /// Support for class 0 and class 1.
    pub support: [u64; 2],
    pub confusion: ConfusionMatrix,
    pub ba_degenerate: bool,
    pub f1_degenerate: bool,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "n,ba,accuracy,f1,support_0,support_1,tp,tn,fp,fn";

    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self> {
        if cm.n() == 0 {
            return Err(Error::config("metrics need at least one example"));
        }
        let fa = f1_and_accuracy(&cm);
        Ok(MetricsReport {
            ba: balanced_accuracy(&cm),
            accuracy: fa.accuracy,
            f1: fa.f1,
            n: cm.n(),
            support: [cm.negatives(), cm.positives()],
            confusion: cm,
            ba_degenerate: cm.has_zero_support(),
            f1_degenerate: fa.f1_degenerate,
        })
    }

    pub fn compute(preds: &[Label], truth: &[Label]) -> Result<Self> {
        Self::from_confusion(confusion(preds, truth)?)
    }

    pub fn to_csv_row(&self) -> String {
        let c = &self.confusion;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.n, self.ba, self.accuracy, self.f1, self.support[0], self.support[1], c.tp, c.tn, c.fp, c.fn_
        )
    }
}
