use std::fmt;
use std::ops::{Add, AddAssign};

use crate::error::{LfaError, Result};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Fractions in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub dice: f64,
    pub jaccard: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl MetricsReport {
    pub const HEADER: &'static str = "Dice, J, Sn, Sp, Acc";

    /// Percentages to two decimals in header order, comma-separated.
    pub fn csv_row(&self) -> String {
        let p = |x: f64| format!("{:.2}", 100.0 * x);
        [self.dice, self.jaccard, self.sensitivity, self.specificity, self.accuracy]
            .map(p)
            .join(", ")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} {:>8} {:>8} {:>8} {:>8}", "Dice", "J", "Sn", "Sp", "Acc")?;
        write!(
            f,
            "{:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            100.0 * self.dice,
            100.0 * self.jaccard,
            100.0 * self.sensitivity,
            100.0 * self.specificity,
            100.0 * self.accuracy
        )
    }
}

/// Binarizes `pred` at `threshold` (values `>=` it are positive) and counts
/// against a {0, 1} ground truth.
pub fn confusion_counts(pred: &Tensor, gt: &Tensor, threshold: f32) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(LfaError::shape(format!(
            "prediction {:?} and ground truth {:?} differ",
            pred.shape(),
            gt.shape()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(LfaError::Domain(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p >= threshold, g > 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// A zero denominator yields 1 when there were no errors to score
/// (`fp + fn = 0`), else 0.
fn ratio(num: u64, den: u64, c: &ConfusionCounts) -> f64 {
    if den == 0 {
        if c.fp + c.fn_ == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(c: &ConfusionCounts) -> Result<MetricsReport> {
    if c.total() == 0 {
        return Err(LfaError::Domain("metrics over zero pixels".into()));
    }
    Ok(MetricsReport {
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, c),
        jaccard: ratio(c.tp, c.tp + c.fp + c.fn_, c),
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        sensitivity: ratio(c.tp, c.tp + c.fn_, c),
        specificity: ratio(c.tn, c.tn + c.fp, c),
    })
}
