//! Novelty detectors over latent vectors.
//!
//! Every detector is fitted on normal training vectors only and produces a
//! score where larger means more anomalous; a threshold tuned on labelled
//! validation scores turns scores into predictions (`1` iff `score >
//! threshold`).

pub mod iforest;
pub mod lof;
pub mod pca_recon;
pub mod search;
pub mod threshold;
pub mod tpe;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SafeError};
use crate::ingest;

pub use iforest::IsoForestModel;
pub use lof::LofModel;
pub use pca_recon::PcaReconModel;
pub use search::{fit_detector, DetectorFit};
pub use threshold::{tune_threshold, ThresholdChoice};
pub use tpe::{tpe_search, ParamSpec, ParamValue, SearchResult, SearchSpace, Trial};

/// Distance used for neighbor queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Manhattan,
    Chebyshev,
    Minkowski { p: f64 },
}

impl Metric {
    /// The four metrics the LOF search chooses from.
    pub const SEARCH_CHOICES: [Metric; 4] = [
        Metric::Euclidean,
        Metric::Manhattan,
        Metric::Chebyshev,
        Metric::Minkowski { p: 3.0 },
    ];

    #[inline]
    pub fn distance(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        let diffs = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs());
        match *self {
            Metric::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Manhattan => diffs.sum(),
            Metric::Chebyshev => diffs.fold(0.0, f64::max),
            Metric::Minkowski { p: 3.0 } => diffs.map(|d| d * d * d).sum::<f64>().cbrt(),
            Metric::Minkowski { p } => diffs.map(|d| d.powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Euclidean => f.write_str("euclidean"),
            Metric::Manhattan => f.write_str("manhattan"),
            Metric::Chebyshev => f.write_str("chebyshev"),
            Metric::Minkowski { p } => write!(f, "minkowski(p={p})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Lof,
    #[serde(rename = "iforest")]
    IsolationForest,
    #[serde(rename = "pca")]
    PcaReconstruction,
}

impl FromStr for DetectorKind {
    type Err = SafeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lof" => Ok(DetectorKind::Lof),
            "iforest" | "if" | "isolation_forest" => Ok(DetectorKind::IsolationForest),
            "pca" | "pca_recon" => Ok(DetectorKind::PcaReconstruction),
            other => Err(SafeError::Config(format!("unknown detector `{other}`"))),
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::Lof => "lof",
            DetectorKind::IsolationForest => "iforest",
            DetectorKind::PcaReconstruction => "pca",
        })
    }
}

/// A fitted detector with its decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Detector {
    Lof(LofModel),
    #[serde(rename = "iforest")]
    IsolationForest(IsoForestModel),
    #[serde(rename = "pca")]
    PcaReconstruction(PcaReconModel),
}

impl Detector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            Detector::Lof(_) => DetectorKind::Lof,
            Detector::IsolationForest(_) => DetectorKind::IsolationForest,
            Detector::PcaReconstruction(_) => DetectorKind::PcaReconstruction,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Detector::Lof(m) => m.dim(),
            Detector::IsolationForest(m) => m.dim,
            Detector::PcaReconstruction(m) => m.pca.mean.len(),
        }
    }

    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            Detector::Lof(m) => m.score(x),
            Detector::IsolationForest(m) => m.score(x),
            Detector::PcaReconstruction(m) => m.score(x),
        }
    }

    /// Scores every row, preserving order.
    pub fn score_all(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.dim() {
            return Err(SafeError::InvalidArgument(format!(
                "{}-dimensional inputs for a {}-dimensional detector",
                x.ncols(),
                self.dim()
            )));
        }
        let rows: Vec<ArrayView1<f64>> = x.rows().into_iter().collect();
        Ok(rows.par_iter().map(|r| self.score(*r)).collect())
    }

    pub fn threshold(&self) -> f64 {
        match self {
            Detector::Lof(m) => m.threshold,
            Detector::IsolationForest(m) => m.threshold,
            Detector::PcaReconstruction(m) => m.threshold,
        }
    }

    pub fn set_threshold(&mut self, threshold: f64) {
        match self {
            Detector::Lof(m) => m.threshold = threshold,
            Detector::IsolationForest(m) => m.threshold = threshold,
            Detector::PcaReconstruction(m) => m.threshold = threshold,
        }
    }

    /// Human-readable hyperparameters.
    pub fn describe(&self) -> String {
        match self {
            Detector::Lof(m) => format!("lof(n_neighbors={}, metric={})", m.n_neighbors, m.metric),
            Detector::IsolationForest(m) => {
                format!("iforest(n_trees={}, subsample={})", m.trees.len(), m.subsample)
            }
            Detector::PcaReconstruction(m) => format!(
                "pca(n_components={}, percentile={})",
                m.pca.n_components(),
                m.percentile
            ),
        }
    }

    pub fn classify(&self, x: &Array2<f64>) -> Result<Vec<u8>> {
        Ok(classify_scores(&self.score_all(x)?, self.threshold()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        ingest::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ingest::read_json(path)
    }
}

/// `1` iff `score > threshold`.
pub fn classify_scores(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s > threshold)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn metrics_on_a_known_pair() {
        let a = array![0.0, 0.0];
        let b = array![3.0, -4.0];
        let d = |m: Metric| m.distance(a.view(), b.view());
        assert_eq!(d(Metric::Euclidean), 5.0);
        assert_eq!(d(Metric::Manhattan), 7.0);
        assert_eq!(d(Metric::Chebyshev), 4.0);
        assert!((d(Metric::Minkowski { p: 3.0 }) - 91f64.cbrt()).abs() < 1e-12);
        assert!((d(Metric::Minkowski { p: 2.0 }) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn classification_is_strict_and_ordered() {
        let scores = [0.5, 1.0, 1.5, 1.0];
        assert_eq!(classify_scores(&scores, 1.0), vec![0, 0, 1, 0]);
        let count = |t| classify_scores(&scores, t).iter().filter(|&&p| p == 1).count();
        assert!(count(0.4) >= count(0.9));
        assert!(count(0.9) >= count(1.2));
        assert!(count(1.2) >= count(2.0));
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("LOF".parse::<DetectorKind>().unwrap(), DetectorKind::Lof);
        assert_eq!("iforest".parse::<DetectorKind>().unwrap(), DetectorKind::IsolationForest);
        assert_eq!("pca".parse::<DetectorKind>().unwrap(), DetectorKind::PcaReconstruction);
        assert!("svm".parse::<DetectorKind>().is_err());
    }
}
