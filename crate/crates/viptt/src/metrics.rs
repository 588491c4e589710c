//! Confusion-matrix evaluation: Cohen's kappa, accuracy, per-class F1.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("y_true has {0} entries but y_pred has {1}")]
    LengthMismatch(usize, usize),
    #[error("label {0} out of range for {1} classes")]
    LabelOutOfRange(usize, usize),
    #[error("empty label sequence")]
    Empty,
    #[error("degenerate marginals: chance agreement is 1 but observed agreement is not")]
    DegenerateMarginals,
}

/// K x K counts, `counts[true][pred]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

/// Cohen's kappa with its observed and chance agreement terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaResult {
    pub kappa: f64,
    pub p0: f64,
    pub pe: f64,
}

impl ConfusionMatrix {
    pub fn from_counts(k: usize, counts: Vec<u64>) -> ConfusionMatrix {
        assert_eq!(counts.len(), k * k);
        ConfusionMatrix { k, counts }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, true_class: usize, pred_class: usize) -> u64 {
        self.counts[true_class * self.k + pred_class]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.count(i, i)).sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        (0..self.k).map(|j| self.count(i, j)).sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.count(i, j)).sum()
    }
}

/// Tally predictions against ground truth.
pub fn confusion_matrix(
    y_true: &[usize],
    y_pred: &[usize],
    k: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts = vec![0u64; k * k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k {
            return Err(MetricsError::LabelOutOfRange(t, k));
        }
        if p >= k {
            return Err(MetricsError::LabelOutOfRange(p, k));
        }
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

/// Cohen's kappa: `(p0 - pe) / (1 - pe)` with `p0 = trace/N` and
/// `pe = sum_i (row_i/N)(col_i/N)`. Complete agreement yields kappa 1,
/// including the degenerate all-one-class case; any other matrix with
/// chance agreement 1 is an error.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<KappaResult, MetricsError> {
    let n = cm.total() as f64;
    assert!(n > 0.0, "empty confusion matrix");
    let p0 = cm.trace() as f64 / n;
    let pe: f64 = (0..cm.k)
        .map(|i| (cm.row_sum(i) as f64 / n) * (cm.col_sum(i) as f64 / n))
        .sum();
    if pe >= 1.0 {
        return if (p0 - 1.0).abs() < 1e-12 {
            Ok(KappaResult {
                kappa: 1.0,
                p0: 1.0,
                pe: 1.0,
            })
        } else {
            Err(MetricsError::DegenerateMarginals)
        };
    }
    Ok(KappaResult {
        kappa: (p0 - pe) / (1.0 - pe),
        p0,
        pe,
    })
}

/// Fraction of correct predictions: `trace / N`.
pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    cm.trace() as f64 / cm.total() as f64
}

/// Per-class F1 = 2PR/(P+R), with the 0/0 -> 0 convention for classes
/// never predicted and/or never present.
pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.k)
        .map(|c| {
            let tp = cm.count(c, c) as f64;
            let col = cm.col_sum(c) as f64;
            let row = cm.row_sum(c) as f64;
            if col == 0.0 || row == 0.0 || tp == 0.0 {
                // covers precision/recall 0/0 cases in one branch: F1 is 0
                // whenever tp is 0 or the class is absent on either side
                return 0.0;
            }
            let p = tp / col;
            let r = tp / row;
            2.0 * p * r / (p + r)
        })
        .collect()
}
