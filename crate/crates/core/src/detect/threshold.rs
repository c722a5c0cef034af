//! Decision thresholds chosen by validation F1.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SafeError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    /// Validation F1 at `threshold`.
    pub f1: f64,
}

/// `2TP / (2TP + FP + FN)`, or 0 when there is nothing to count.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// F1 of `score > threshold` against `labels` (1 = attack).
pub fn f1_at(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    f1_from_counts(tp, fp, fn_)
}

/// Candidate thresholds in ascending order: one just below the smallest
/// score (everything flagged) followed by the midpoints between
/// consecutive distinct scores.
pub fn candidates(scores: &[f64]) -> Vec<f64> {
    let mut uniq: Vec<f64> = scores.to_vec();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let mut out = Vec::with_capacity(uniq.len());
    if let Some(&lo) = uniq.first() {
        out.push(lo.next_down());
    }
    for w in uniq.windows(2) {
        let mid = w[0] + (w[1] - w[0]) / 2.0;
        // Adjacent floats have no representable midpoint; the lower value
        // splits them the same way under the strict `>` rule.
        out.push(if mid < w[1] { mid } else { w[0] });
    }
    out
}

/// Threshold maximizing validation F1; ties go to the lower threshold.
pub fn tune_threshold(scores: &[f64], labels: &[u8]) -> Result<ThresholdChoice> {
    if scores.len() != labels.len() {
        return Err(SafeError::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SafeError::Numerical("non-finite validation score".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(SafeError::Data("threshold tuning needs both classes in validation".into()));
    }

    // Sweep thresholds upward: everything at or below the threshold is
    // predicted normal, so counts move as each distinct score is passed.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let cands = candidates(scores);
    let (mut tp, mut fp) = (positives, labels.len() - positives);
    let mut fn_ = 0;
    let mut next = 0;
    let mut best = ThresholdChoice {
        threshold: cands[0],
        f1: f64::NEG_INFINITY,
    };
    for &t in &cands {
        while next < order.len() && scores[order[next]] <= t {
            if labels[order[next]] == 1 {
                tp -= 1;
                fn_ += 1;
            } else {
                fp -= 1;
            }
            next += 1;
        }
        let f1 = f1_from_counts(tp, fp, fn_);
        if f1 > best.f1 {
            best = ThresholdChoice { threshold: t, f1 };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separable_scores() {
        let c = tune_threshold(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(c.threshold, 2.5);
        assert_eq!(c.f1, 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(tune_threshold(&[1.0, 2.0], &[0, 0]).is_err());
        assert!(tune_threshold(&[1.0, 2.0], &[1, 1]).is_err());
        assert!(tune_threshold(&[1.0], &[1, 0]).is_err());
    }

    #[test]
    fn ties_prefer_lower_threshold() {
        // Flagging everything and flagging only the top score both give 2/3.
        let c = tune_threshold(&[1.0, 2.0, 3.0, 4.0], &[1, 0, 0, 1]).unwrap();
        assert!(c.threshold < 1.0);
        assert!((c.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((f1_at(&[1.0, 2.0, 3.0, 4.0], &[1, 0, 0, 1], 3.5) - c.f1).abs() < 1e-15);
    }

    #[test]
    fn adjacent_floats_split_correctly() {
        let a = 1.0f64;
        let b = a.next_up();
        let c = tune_threshold(&[a, b], &[0, 1]).unwrap();
        assert_eq!(c.f1, 1.0);
        assert_eq!(f1_at(&[a, b], &[0, 1], c.threshold), 1.0);
    }

    #[test]
    fn sweep_matches_exhaustive_scan() {
        let mut rng = crate::rng::seeded(11);
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8)) / 2.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let c = tune_threshold(&scores, &labels).unwrap();
            assert_eq!(c.f1, f1_at(&scores, &labels, c.threshold));
            for t in candidates(&scores) {
                let f = f1_at(&scores, &labels, t);
                assert!(c.f1 >= f);
                if f == c.f1 {
                    assert!(c.threshold <= t);
                }
            }
        }
    }
}
