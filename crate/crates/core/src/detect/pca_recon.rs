//! PCA reconstruction-error detector.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SafeError};
use crate::feature_select::{fit_pca, PcaModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaReconModel {
    /// Retained components and the training mean.
    pub pca: PcaModel,
    /// Percentile of training errors used as the threshold.
    pub percentile: f64,
    pub threshold: f64,
}

/// Linear-interpolation percentile (the usual "linear" rule): rank
/// `p/100 * (n-1)` in the sorted values.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

impl PcaReconModel {
    pub fn fit(train: &Array2<f64>, n_components: usize, percentile_p: f64) -> Result<Self> {
        if !(percentile_p > 0.0 && percentile_p < 100.0) {
            return Err(SafeError::InvalidArgument(format!("percentile {percentile_p} outside (0, 100)")));
        }
        let full = fit_pca(train)?;
        let pca = full.truncated(n_components.min(full.n_components()))?;
        let mut model = PcaReconModel {
            pca,
            percentile: percentile_p,
            threshold: 0.0,
        };
        let errors: Vec<f64> = train.rows().into_iter().map(|r| model.score(r)).collect();
        model.threshold = percentile(&errors, percentile_p);
        Ok(model)
    }

    /// `||(x - mu) - P P^T (x - mu)||^2`.
    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        self.pca.residual_sq(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 50.0), 2.5);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert!((percentile(&v, 90.0) - 3.7).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_offset_scores_its_square_norm() {
        // Points on the x axis in 3-D: one component spans them.
        let train = array![[-2.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let m = PcaReconModel::fit(&train, 1, 95.0).unwrap();
        assert!(m.score(array![7.0, 0.0, 0.0].view()) < 1e-10);
        assert!((m.score(array![0.5, 2.0, 0.0].view()) - 4.0).abs() < 1e-10);
        assert!((m.score(array![0.0, 1.2, 1.6].view()) - 4.0).abs() < 1e-10);
    }

    #[test]
    fn percentile_bounds() {
        let train = array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]];
        assert!(PcaReconModel::fit(&train, 1, 0.0).is_err());
        assert!(PcaReconModel::fit(&train, 1, 100.0).is_err());
        assert!(PcaReconModel::fit(&train, 1, 99.0).unwrap().threshold.is_finite());
    }
}
