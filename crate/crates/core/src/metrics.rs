//! Binary detection metrics with outliers as the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    /// Counts from parallel prediction and truth vectors (`true` = outlier).
    pub fn from_predictions(predicted: &[bool], truth: &[bool]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::shape(
                "confusion counts",
                truth.len(),
                predicted.len(),
            ));
        }
        if truth.is_empty() {
            return Err(Error::Empty("labeled records"));
        }
        let mut c = Self::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `TP / (TP + FP)`, 0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, "precision")
    }

    /// `TP / (TP + FN)`, 0 when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, "recall")
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize, what: &str) -> f64 {
    if den == 0 {
        log::warn!("{what} has a zero denominator; reporting 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Scores `>= threshold` are predicted positive.
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per unique score, highest threshold first.
    pub points: Vec<PrPoint>,
    pub average_precision: f64,
}

impl PrCurve {
    /// At most `n` points, evenly spaced along the curve, endpoints kept.
    pub fn downsample(&self, n: usize) -> Vec<PrPoint> {
        let len = self.points.len();
        if n == 0 || len <= n {
            return self.points.clone();
        }
        if n == 1 {
            return vec![self.points[len - 1]];
        }
        (0..n)
            .map(|i| self.points[i * (len - 1) / (n - 1)])
            .collect()
    }
}

/// Precision-recall curve over every unique score and the step-wise
/// average precision `sum_k (R_k - R_{k-1}) * P_k`.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    if scores.len() != labels.len() {
        return Err(Error::shape("pr_curve", labels.len(), scores.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::invalid(
            "precision-recall needs at least one positive and one negative label",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold: t,
            recall,
            precision,
        });
    }
    Ok(PrCurve {
        points,
        average_precision: ap,
    })
}

/// Metrics of one detector configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    /// `(recall, precision)` pairs of the ranking score.
    pub pr_curve: Vec<(f64, f64)>,
    pub average_precision: Option<f64>,
    pub config: serde_json::Value,
}

impl EvalReport {
    /// Report for hard flags; the PR curve uses `scores` when the labels
    /// contain both classes.
    pub fn new(
        flags: &[bool],
        scores: &[f64],
        truth: &[bool],
        config: serde_json::Value,
    ) -> Result<Self> {
        let counts = ConfusionCounts::from_predictions(flags, truth)?;
        let curve = pr_curve(scores, truth).ok();
        Ok(Self {
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            counts,
            pr_curve: curve.as_ref().map_or_else(Vec::new, |c| {
                c.points.iter().map(|p| (p.recall, p.precision)).collect()
            }),
            average_precision: curve.map(|c| c.average_precision),
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_case() {
        let c = ConfusionCounts {
            tp: 10,
            fp: 10,
            tn: 5,
            fn_: 0,
        };
        assert_eq!(c.precision(), 0.5);
        assert_eq!(c.recall(), 1.0);
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_negative_predictions() {
        let c =
            ConfusionCounts::from_predictions(&[false; 4], &[true, false, true, false]).unwrap();
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn perfect_ranking() {
        let c = pr_curve(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(c.average_precision, 1.0);
    }

    #[test]
    fn ties_form_one_step() {
        let c = pr_curve(&[1.0, 1.0, 0.0], &[true, false, false]).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!(c.average_precision, 0.5);
    }

    #[test]
    fn degenerate_labels_rejected() {
        assert!(pr_curve(&[0.1, 0.2], &[true, true]).is_err());
        assert!(pr_curve(&[0.1, 0.2], &[false, false]).is_err());
    }
}
