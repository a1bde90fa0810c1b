use serde::{Deserialize, Serialize};

use crate::corpus::Label;

/// Confusion counts with METAPHORICAL as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, gold: Label, predicted: Label) {
        match (gold, predicted) {
            (Label::Metaphorical, Label::Metaphorical) => self.tp += 1,
            (Label::Literal, Label::Metaphorical) => self.fp += 1,
            (Label::Metaphorical, Label::Literal) => self.fn_ += 1,
            (Label::Literal, Label::Literal) => self.tn += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassificationMetrics {
    /// Undefined precision or recall (zero denominator) is reported as 0.
    pub fn from_confusion(c: Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            accuracy: ratio(c.tp + c.tn, c.total()),
            confusion: c,
        }
    }

    /// Field-wise `self - base`.
    pub fn delta(&self, base: &Self) -> MetricDeltas {
        MetricDeltas {
            precision: self.precision - base.precision,
            recall: self.recall - base.recall,
            f1: self.f1 - base.f1,
            accuracy: self.accuracy - base.accuracy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}
