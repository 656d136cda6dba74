//! Train/test splitting and the two-class classification report.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{ForestError, ForestModel, TrainingSet};
use crate::label::Label;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

/// Number of test rows: floor(n × fraction + 0.5).
pub fn test_size(n: usize, test_fraction: f64) -> usize {
    ((n as f64 * test_fraction + 0.5).floor() as usize).min(n)
}

/// Seeded, non-stratified shuffle split. The first `test_size` positions
/// of the permutation form the test set; both index lists are returned
/// in ascending order.
pub fn split_train_test(n: usize, test_fraction: f64, seed: u64) -> Result<SplitResult, EvalError> {
    if n < 2 {
        return Err(EvalError::InvalidInput(format!("need at least 2 examples, got {n}")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(EvalError::InvalidInput(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = test_size(n, test_fraction);
    let mut test_indices = perm[..k].to_vec();
    let mut train_indices = perm[k..].to_vec();
    test_indices.sort_unstable();
    train_indices.sort_unstable();
    Ok(SplitResult { train_indices, test_indices, seed })
}

/// `counts[truth][predicted]`, class codes NDD = 0, DD = 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[u64; 2]; 2],
}

impl Confusion {
    /// From the usual positive-class (DD) counts.
    pub fn from_counts(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        Confusion { counts: [[tn, fp], [fn_, tp]] }
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &Confusion) {
        for t in 0..2 {
            for p in 0..2 {
                self.counts[t][p] += other.counts[t][p];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// Indexed by class code.
    pub per_class: [ClassMetrics; 2],
    pub accuracy: f64,
    pub macro_avg: AverageMetrics,
    pub weighted_avg: AverageMetrics,
    pub total_support: u64,
    pub confusion: Confusion,
    /// Zero-denominator rates that were reported as 0.
    #[serde(default)]
    pub notes: Vec<String>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ClassificationReport {
    pub fn from_confusion(confusion: Confusion) -> Result<Self, EvalError> {
        let total = confusion.total();
        if total == 0 {
            return Err(EvalError::InvalidInput("empty evaluation set".into()));
        }
        let c = &confusion.counts;
        let mut notes = Vec::new();
        let per_class: [ClassMetrics; 2] = std::array::from_fn(|k| {
            let tp = c[k][k];
            let predicted = c[0][k] + c[1][k];
            let support = c[k][0] + c[k][1];
            let name = Label::from_index(k).map_or("?", Label::as_str);
            let precision = ratio(tp, predicted).unwrap_or_else(|| {
                notes.push(format!("precision of {name} undefined (no predictions), reported as 0"));
                0.0
            });
            let recall = ratio(tp, support).unwrap_or_else(|| {
                notes.push(format!("recall of {name} undefined (no support), reported as 0"));
                0.0
            });
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassMetrics { precision, recall, f1, support }
        });
        let correct = c[0][0] + c[1][1];
        let accuracy = correct as f64 / total as f64;

        let macro_avg = AverageMetrics {
            precision: (per_class[0].precision + per_class[1].precision) / 2.0,
            recall: (per_class[0].recall + per_class[1].recall) / 2.0,
            f1: (per_class[0].f1 + per_class[1].f1) / 2.0,
        };
        let weight =
            |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / total as f64;
        let weighted_avg =
            AverageMetrics { precision: weight(|m| m.precision), recall: weight(|m| m.recall), f1: weight(|m| m.f1) };
        Ok(ClassificationReport {
            per_class,
            accuracy,
            macro_avg,
            weighted_avg,
            total_support: total,
            confusion,
            notes,
        })
    }

    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Result<Self, EvalError> {
        if truth.len() != predicted.len() {
            return Err(EvalError::InvalidInput("truth and prediction lengths differ".into()));
        }
        let mut confusion = Confusion::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion.record(t, p);
        }
        Self::from_confusion(confusion)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Predicts every test row and tabulates the report.
pub fn evaluate(model: &ForestModel, test: &TrainingSet) -> Result<ClassificationReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::InvalidInput("empty test set".into()));
    }
    let mut confusion = Confusion::default();
    for (row, &truth) in test.rows().iter().zip(test.labels()) {
        confusion.record(truth, model.predict(row)?);
    }
    ClassificationReport::from_confusion(confusion)
}

impl fmt::Display for ClassificationReport {
    /// Aligned table: one row per class, then accuracy, macro and weighted
    /// averages.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>14} {:>10} {:>10} {:>10} {:>10}", "", "precision", "recall", "f1-score", "support")?;
        writeln!(f)?;
        for (k, m) in self.per_class.iter().enumerate() {
            let name = format!("{k} ({})", Label::from_index(k).map_or("?", Label::as_str));
            writeln!(f, "{:>14} {:>10.2} {:>10.2} {:>10.2} {:>10}", name, m.precision, m.recall, m.f1, m.support)?;
        }
        writeln!(f)?;
        writeln!(f, "{:>14} {:>10} {:>10} {:>10.2} {:>10}", "accuracy", "", "", self.accuracy, self.total_support)?;
        for (name, avg) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            writeln!(
                f,
                "{:>14} {:>10.2} {:>10.2} {:>10.2} {:>10}",
                name, avg.precision, avg.recall, avg.f1, self.total_support
            )?;
        }
        for note in &self.notes {
            writeln!(f, "note: {note}")?;
        }
        Ok(())
    }
}
