//! Confusion matrix and micro/macro-averaged F1.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalMetrics {
    /// `confusion[truth][predicted]`
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassScores>,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl EvalMetrics {
    /// Panics if a label is outside `0..num_classes` or the slices differ in length.
    pub fn compute(truth: &[usize], predicted: &[usize], num_classes: usize) -> Self {
        assert_eq!(truth.len(), predicted.len(), "truth/prediction length mismatch");
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }

        let mut tp_total = 0;
        let mut fp_total = 0;
        let mut fn_total = 0;
        let per_class: Vec<ClassScores> = (0..num_classes)
            .map(|c| {
                let tp = confusion[c][c];
                let predicted_c: u64 = confusion.iter().map(|row| row[c]).sum();
                let actual_c: u64 = confusion[c].iter().sum();
                tp_total += tp;
                fp_total += predicted_c - tp;
                fn_total += actual_c - tp;
                let precision = ratio(tp, predicted_c);
                let recall = ratio(tp, actual_c);
                ClassScores {
                    precision,
                    recall,
                    f1: f1(precision, recall),
                }
            })
            .collect();

        let micro_p = ratio(tp_total, tp_total + fp_total);
        let micro_r = ratio(tp_total, tp_total + fn_total);
        let macro_f1 = if num_classes == 0 {
            0.0
        } else {
            per_class.iter().map(|c| c.f1).sum::<f64>() / num_classes as f64
        };
        EvalMetrics {
            confusion,
            per_class,
            micro_f1: f1(micro_p, micro_r),
            macro_f1,
        }
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.confusion.len()).map(|c| self.confusion[c][c]).sum();
        ratio(correct, self.total())
    }
}
