//! Confusion counts and precision/recall/F1 with attack as the positive
//! class.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SafeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(SafeError::InvalidArgument(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if predictions.is_empty() {
            return Err(SafeError::InvalidArgument("cannot evaluate zero predictions".into()));
        }
        let mut c = Confusion::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p == 1, y == 1) {
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
}

/// Classification quality of one set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `TP + FP = 0`; precision reported as 0.
    pub precision_undefined: bool,
    /// `TP + FN = 0`; recall reported as 0.
    pub recall_undefined: bool,
    /// `P + R = 0`; F1 reported as 0.
    pub f1_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
        let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
        // 2PR / (P + R) reduces to 2TP / (2TP + FP + FN); one division keeps
        // the result correctly rounded. P + R = 0 exactly when TP = 0.
        let f1_undefined = c.tp == 0;
        let f1 = if f1_undefined {
            0.0
        } else {
            (2 * c.tp) as f64 / (2 * c.tp + c.fp + c.fn_) as f64
        };
        Metrics {
            confusion: c,
            precision,
            recall,
            f1,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        }
    }
}

/// Metrics of `predictions` against `labels` (both 0/1, 1 = attack).
pub fn evaluate(predictions: &[u8], labels: &[u8]) -> Result<Metrics> {
    Ok(Metrics::from_confusion(Confusion::from_predictions(predictions, labels)?))
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flag = |undefined: bool| if undefined { " (undefined, reported as 0)" } else { "" };
        let c = &self.confusion;
        writeln!(f, "  TP {:>8}   FP {:>8}", c.tp, c.fp)?;
        writeln!(f, "  FN {:>8}   TN {:>8}", c.fn_, c.tn)?;
        writeln!(f, "  precision  {:.4}{}", self.precision, flag(self.precision_undefined))?;
        writeln!(f, "  recall     {:.4}{}", self.recall, flag(self.recall_undefined))?;
        write!(f, "  f1         {:.4}{}", self.f1, flag(self.f1_undefined))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_case() {
        let m = evaluate(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap();
        assert_eq!(
            m.confusion,
            Confusion {
                tp: 1,
                fp: 1,
                tn: 2,
                fn_: 0
            }
        );
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let m = evaluate(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_positive_predictions_are_flagged() {
        let m = evaluate(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert!(m.precision_undefined && m.f1_undefined);
        assert!(!m.recall_undefined);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn bad_inputs() {
        assert!(evaluate(&[], &[]).is_err());
        assert!(evaluate(&[1], &[1, 0]).is_err());
    }
}
