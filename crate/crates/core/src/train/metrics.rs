use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Counts and rates for one class; rates are `None` where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: u64,
    pub predicted: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_beta: Option<f64>,
}

/// Aggregates over classes with a defined value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_beta: Option<f64>,
}

/// Confusion matrix (rows = true class, columns = predicted) and the
/// metrics derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_classes: usize,
    pub beta: f64,
    pub confusion: Vec<Vec<u64>>,
    pub total: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean; the headline aggregate.
    pub macro_avg: Averages,
    /// Support-weighted mean.
    pub weighted_avg: Averages,
}

/// `F_beta = (1 + beta^2) P R / (beta^2 P + R)`, zero when `P = R = 0`.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

impl MetricsReport {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shapes("metrics", &[truth.len()], &[predicted.len()]));
        }
        let mut confusion = alloc::vec![alloc::vec![0u64; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            let bad = if t >= n_classes { Some(t) } else if p >= n_classes { Some(p) } else { None };
            if let Some(target) = bad {
                return Err(Error::InvalidTarget { target, classes: n_classes });
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion, 1.0)
    }

    pub fn from_confusion(confusion: Vec<Vec<u64>>, beta: f64) -> Result<Self> {
        let n = confusion.len();
        if n == 0 || confusion.iter().any(|r| r.len() != n) {
            return Err(Error::shape("metrics", "confusion matrix must be square and non-empty"));
        }
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..n).map(|i| confusion[i][i]).sum();
        let per_class: Vec<ClassMetrics> = (0..n)
            .map(|c| {
                let tp = confusion[c][c];
                let support: u64 = confusion[c].iter().sum();
                let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
                let precision = (predicted > 0).then(|| tp as f64 / predicted as f64);
                let recall = (support > 0).then(|| tp as f64 / support as f64);
                // with one ratio undefined tp = 0, and the count form
                // (1+b²)tp / ((1+b²)tp + b²fn + fp) is 0
                let f = match (precision, recall) {
                    (Some(p), Some(r)) => Some(f_beta(p, r, beta)),
                    (None, None) => None,
                    _ => Some(0.0),
                };
                ClassMetrics {
                    class: c,
                    support,
                    predicted,
                    tp,
                    fp: predicted - tp,
                    fn_: support - tp,
                    tn: total + tp - support - predicted,
                    precision,
                    recall,
                    f_beta: f,
                }
            })
            .collect();
        let average = |pick: fn(&ClassMetrics) -> Option<f64>, weighted: bool| {
            let (mut sum, mut weight) = (0.0, 0.0);
            for m in &per_class {
                if let Some(v) = pick(m) {
                    let w = if weighted { m.support as f64 } else { 1.0 };
                    sum += w * v;
                    weight += w;
                }
            }
            (weight > 0.0).then(|| sum / weight)
        };
        let averages = |weighted| Averages {
            precision: average(|m| m.precision, weighted),
            recall: average(|m| m.recall, weighted),
            f_beta: average(|m| m.f_beta, weighted),
        };
        Ok(MetricsReport {
            n_classes: n,
            beta,
            total,
            correct,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            macro_avg: averages(false),
            weighted_avg: averages(true),
            per_class,
            confusion,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        let r = MetricsReport::from_predictions(&y, &y, 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_class.iter().all(|m| m.f_beta == Some(1.0)));
        assert_eq!(r.macro_avg.f_beta, Some(1.0));
    }

    #[test]
    fn absent_class_is_null_and_skipped() {
        let r = MetricsReport::from_predictions(&[0, 0, 1], &[0, 1, 1], 3).unwrap();
        let c2 = &r.per_class[2];
        assert_eq!((c2.recall, c2.precision, c2.f_beta), (None, None, None));
        let p = r.macro_avg.precision.unwrap();
        assert!((p - (1.0 + 0.5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn never_predicted_class_scores_zero_f1() {
        let r = MetricsReport::from_predictions(&[0, 1, 2, 2], &[0, 2, 2, 2], 3).unwrap();
        let c1 = &r.per_class[1];
        assert_eq!((c1.precision, c1.recall, c1.f_beta), (None, Some(0.0), Some(0.0)));
        assert_eq!((c1.tp, c1.fp, c1.fn_, c1.tn), (0, 0, 1, 3));
        assert_eq!(r.per_class[0].tn, 3);
    }

    #[test]
    fn twenty_three_errors_in_5760() {
        let mut confusion = alloc::vec![alloc::vec![0u64; 45]; 45];
        for (c, row) in confusion.iter_mut().enumerate() {
            row[c] = 128;
        }
        for k in 0..23 {
            confusion[k][k] -= 1;
            confusion[k][(k + 1) % 45] += 1;
        }
        let r = MetricsReport::from_confusion(confusion, 1.0).unwrap();
        assert_eq!(r.total, 5760);
        assert_eq!(r.correct, 5737);
        assert!(((r.accuracy * 1000.0).round() / 10.0 - 99.6).abs() < 1e-12);
    }

    #[test]
    fn bad_label_rejected() {
        assert!(matches!(
            MetricsReport::from_predictions(&[0, 3], &[0, 1], 2),
            Err(Error::InvalidTarget { target: 3, classes: 2 })
        ));
    }
}
