use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Classification summary. `confusion[t][p]` counts records of true class
/// `t` predicted as `p`. Precision, recall and F1 are 0 when their
/// denominator is 0; macro scores are unweighted class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let n = confusion.len();
        assert!(confusion.iter().all(|r| r.len() == n), "confusion matrix must be square");
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..n).map(|i| confusion[i][i]).sum();
        let per_class: Vec<ClassMetrics> = (0..n)
            .map(|c| {
                let tp = confusion[c][c];
                let predicted: u64 = (0..n).map(|t| confusion[t][c]).sum();
                let actual: u64 = confusion[c].iter().sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, actual);
                let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
                ClassMetrics { precision, recall, f1, support: actual }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_class.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            accuracy: ratio(trace, total),
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            per_class,
            confusion,
        }
    }

    /// Build from `(true, predicted)` pairs over `classes` classes.
    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = vec![vec![0u64; classes]; classes];
        for (t, p) in pairs {
            m[t][p] += 1;
        }
        Self::from_confusion(m)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}
