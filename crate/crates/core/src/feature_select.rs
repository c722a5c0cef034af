//! Unsupervised feature ranking from PCA loadings.
//!
//! A feature's score is the sum of the absolute loadings it receives on the
//! smallest set of leading principal components whose cumulative explained
//! variance ratio reaches a target (95% by default). The top `k` features by
//! score are kept.

use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SafeError};

/// Principal axes of a data matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// One unit-norm principal axis per row, by descending eigenvalue.
    pub components: Array2<f64>,
    /// Eigenvalues of the sample covariance, descending, clamped at 0.
    pub explained_variance: Array1<f64>,
    pub explained_variance_ratio: Array1<f64>,
}

/// Sample covariance (divisor `n - 1`) of the rows of `x` around `mean`.
pub fn covariance(x: &Array2<f64>, mean: &Array1<f64>) -> Array2<f64> {
    let centered = x - &mean.view().insert_axis(Axis(0));
    centered.t().dot(&centered) / (x.nrows() as f64 - 1.0)
}

/// Eigendecomposition of the covariance of `x`.
///
/// Components are ordered by descending eigenvalue and each one's entry of
/// largest magnitude is made non-negative.
pub fn fit_pca(x: &Array2<f64>) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if n < 2 || d < 1 {
        return Err(SafeError::InvalidArgument(format!("PCA needs n >= 2 and d >= 1, got {n}x{d}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SafeError::InvalidArgument("PCA input has non-finite entries".into()));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let cov = covariance(x, &mean);
    let total: f64 = cov.diag().sum();
    if total <= 0.0 {
        return Err(SafeError::Data("PCA input has rank 0 (all rows identical)".into()));
    }

    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut components = Array2::zeros((d, d));
    let mut variance = Array1::zeros(d);
    for (row, &src) in order.iter().enumerate() {
        variance[row] = eig.eigenvalues[src].max(0.0);
        let v = eig.eigenvectors.column(src);
        let norm = v.norm();
        let pivot = (0..d).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            components[[row, i]] = sign * v[i] / norm;
        }
    }
    let var_sum = variance.sum();
    let explained_variance_ratio = variance.mapv(|v| v / var_sum);
    Ok(PcaModel {
        mean,
        components,
        explained_variance: variance,
        explained_variance_ratio,
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    /// `sum_j lambda_j a_j a_j^T`, which equals the sample covariance.
    pub fn reconstruct_covariance(&self) -> Array2<f64> {
        let scaled = &self.components * &self.explained_variance.view().insert_axis(Axis(1));
        self.components.t().dot(&scaled)
    }

    /// Keeps only the leading `m` components.
    pub fn truncated(&self, m: usize) -> Result<PcaModel> {
        if m == 0 || m > self.n_components() {
            return Err(SafeError::InvalidArgument(format!(
                "cannot keep {m} of {} components",
                self.n_components()
            )));
        }
        Ok(PcaModel {
            mean: self.mean.clone(),
            components: self.components.slice(ndarray::s![..m, ..]).to_owned(),
            explained_variance: self.explained_variance.slice(ndarray::s![..m]).to_owned(),
            explained_variance_ratio: self.explained_variance_ratio.slice(ndarray::s![..m]).to_owned(),
        })
    }

    /// Squared norm of the residual of `x` after projecting onto the
    /// retained components.
    pub fn residual_sq(&self, x: ArrayView1<f64>) -> f64 {
        let centered = &x - &self.mean;
        let coords = self.components.dot(&centered);
        let projected = self.components.t().dot(&coords);
        centered.iter().zip(&projected).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Smallest `m` whose cumulative explained variance ratio reaches `target`.
pub fn choose_num_components(evr: &[f64], target: f64) -> Result<usize> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(SafeError::InvalidArgument(format!("variance target {target} outside (0, 1]")));
    }
    if evr.is_empty() {
        return Err(SafeError::InvalidArgument("empty explained variance ratio".into()));
    }
    let mut cumulative = 0.0;
    for (m, r) in evr.iter().enumerate() {
        cumulative += r;
        if cumulative >= target {
            return Ok(m + 1);
        }
    }
    // rounding can leave the full sum a hair under 1.0
    Ok(evr.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub scores: Vec<f64>,
    /// Feature indices by descending score, ties by ascending index.
    pub order: Vec<usize>,
    /// Number of components the scores were summed over.
    pub n_components: usize,
}

pub fn rank_features(pca: &PcaModel, m: usize) -> Result<FeatureRanking> {
    if m == 0 || m > pca.n_components() {
        return Err(SafeError::InvalidArgument(format!(
            "component count {m} outside 1..={}",
            pca.n_components()
        )));
    }
    let scores: Vec<f64> = pca
        .components
        .slice(ndarray::s![..m, ..])
        .axis_iter(Axis(1))
        .map(|col| col.iter().map(|a| a.abs()).sum())
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(FeatureRanking {
        scores,
        order,
        n_components: m,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSubset {
    pub indices: Vec<usize>,
}

impl FeatureSubset {
    pub fn k(&self) -> usize {
        self.indices.len()
    }
}

pub fn select_top_k(ranking: &FeatureRanking, k: usize) -> Result<FeatureSubset> {
    let d = ranking.order.len();
    if k == 0 || k > d {
        return Err(SafeError::InvalidArgument(format!("k = {k} outside 1..={d}")));
    }
    Ok(FeatureSubset {
        indices: ranking.order[..k].to_vec(),
    })
}

/// One line of the ranking report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub score: f64,
    pub rank: usize,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub n_components: usize,
    pub evr_target: f64,
    pub k: usize,
    pub features: Vec<RankedFeature>,
}

impl RankingReport {
    pub fn new(names: &[String], ranking: &FeatureRanking, subset: &FeatureSubset, evr_target: f64) -> Self {
        let features = ranking
            .order
            .iter()
            .enumerate()
            .map(|(rank, &i)| RankedFeature {
                name: names[i].clone(),
                score: ranking.scores[i],
                rank: rank + 1,
                selected: rank < subset.k(),
            })
            .collect();
        RankingReport {
            n_components: ranking.n_components,
            evr_target,
            k: subset.k(),
            features,
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::ingest::write_json(path, self)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        crate::ingest::read_json(path)
    }

    pub fn selected_names(&self) -> Vec<String> {
        self.features
            .iter()
            .filter(|f| f.selected)
            .map(|f| f.name.clone())
            .collect()
    }
}

/// Full module-1 fit: PCA, component count for `evr_target`, ranking, top-k.
pub fn select_features(train_normal: &Array2<f64>, k: usize, evr_target: f64) -> Result<(FeatureRanking, FeatureSubset)> {
    let pca = fit_pca(train_normal)?;
    let m = choose_num_components(pca.explained_variance_ratio.as_slice().expect("contiguous"), evr_target)?;
    let ranking = rank_features(&pca, m)?;
    let subset = select_top_k(&ranking, k)?;
    Ok((ranking, subset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::seeded(seed);
        let mix = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
        let raw = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
        raw.dot(&mix)
    }

    #[test]
    fn points_on_a_line() {
        let x = Array2::from_shape_fn((20, 2), |(i, _)| i as f64 * 0.5 - 3.0);
        let pca = fit_pca(&x).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((pca.components[[0, 0]] - s).abs() < 1e-10);
        assert!((pca.components[[0, 1]] - s).abs() < 1e-10);
        assert!((pca.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!(pca.explained_variance_ratio[1].abs() < 1e-12);
    }

    #[test]
    fn rank_zero_input_is_rejected() {
        let x = Array2::from_elem((5, 3), 2.5);
        assert!(matches!(fit_pca(&x), Err(SafeError::Data(_))));
        assert!(fit_pca(&Array2::zeros((1, 3))).is_err());
    }

    #[test]
    fn components_are_orthonormal_and_rebuild_covariance() {
        for seed in 0..5 {
            let x = random_matrix(200, 6, seed);
            let pca = fit_pca(&x).unwrap();
            let gram = pca.components.dot(&pca.components.t());
            for i in 0..6 {
                for j in 0..6 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[[i, j]] - want).abs() < 1e-8);
                }
            }
            let diff = pca.reconstruct_covariance() - covariance(&x, &pca.mean);
            let frob = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(frob < 1e-6, "frobenius error {frob}");
            let evr = &pca.explained_variance_ratio;
            assert!(evr.windows(2).into_iter().all(|w| w[0] >= w[1]));
            assert!(evr.sum() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn sign_convention_makes_largest_entry_non_negative() {
        let pca = fit_pca(&random_matrix(50, 4, 11)).unwrap();
        for row in pca.components.rows() {
            let big = row.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big >= 0.0);
        }
    }

    #[test]
    fn component_count_examples() {
        assert_eq!(choose_num_components(&[0.6, 0.3, 0.1], 0.95).unwrap(), 3);
        assert_eq!(choose_num_components(&[0.96, 0.04], 0.95).unwrap(), 1);
        assert_eq!(choose_num_components(&[0.5, 0.45, 0.05], 0.95).unwrap(), 2);
        assert!(choose_num_components(&[1.0], 0.0).is_err());
        assert!(choose_num_components(&[1.0], 1.5).is_err());
    }

    #[test]
    fn ranking_examples() {
        let pca = PcaModel {
            mean: array![0.0, 0.0],
            components: array![[0.8, -0.6], [0.6, 0.8]],
            explained_variance: array![2.0, 1.0],
            explained_variance_ratio: array![2.0 / 3.0, 1.0 / 3.0],
        };
        let both = rank_features(&pca, 2).unwrap();
        assert!((both.scores[0] - 1.4).abs() < 1e-12 && (both.scores[1] - 1.4).abs() < 1e-12);
        assert_eq!(both.order, vec![0, 1]);
        let first = rank_features(&pca, 1).unwrap();
        assert_eq!(first.scores, vec![0.8, 0.6]);
        assert_eq!(first.order, vec![0, 1]);
        assert!(rank_features(&pca, 0).is_err());
        assert!(rank_features(&pca, 3).is_err());
    }

    #[test]
    fn ranking_matches_direct_column_sums() {
        let pca = fit_pca(&random_matrix(100, 5, 3)).unwrap();
        let ranking = rank_features(&pca, 3).unwrap();
        for i in 0..5 {
            let mut direct = 0.0;
            for j in 0..3 {
                direct += pca.components[[j, i]].abs();
            }
            assert!((ranking.scores[i] - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn top_k_cases() {
        let ranking = FeatureRanking {
            scores: vec![0.1, 0.9, 0.5],
            order: vec![1, 2, 0],
            n_components: 1,
        };
        assert_eq!(select_top_k(&ranking, 1).unwrap().indices, vec![1]);
        assert_eq!(select_top_k(&ranking, 3).unwrap().indices, vec![1, 2, 0]);
        assert!(select_top_k(&ranking, 0).is_err());
        assert!(select_top_k(&ranking, 4).is_err());
    }

    #[test]
    fn top_31_of_59_features() {
        let mut rng = crate::rng::seeded(59);
        let x = Array2::from_shape_fn((300, 59), |_| rng.random::<f64>());
        let (_, subset) = select_features(&x, 31, 0.95).unwrap();
        let mut idx = subset.indices.clone();
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 31);
    }

    #[test]
    fn ranking_is_permutation_equivariant() {
        let x = random_matrix(150, 5, 8);
        let perm = [3, 0, 4, 1, 2];
        let xp = x.select(Axis(1), &perm);
        let a = rank_features(&fit_pca(&x).unwrap(), 3).unwrap();
        let b = rank_features(&fit_pca(&xp).unwrap(), 3).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert!((b.scores[new] - a.scores[old]).abs() < 1e-9);
        }
    }

    proptest::proptest! {
        #[test]
        fn larger_target_never_needs_fewer_components(
            raw in proptest::collection::vec(0.001f64..1.0, 1..12),
            t1 in 0.01f64..1.0,
            t2 in 0.01f64..1.0,
        ) {
            let total: f64 = raw.iter().sum();
            let mut evr: Vec<f64> = raw.iter().map(|v| v / total).collect();
            evr.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            proptest::prop_assert!(
                choose_num_components(&evr, lo).unwrap() <= choose_num_components(&evr, hi).unwrap()
            );
        }

        #[test]
        fn smaller_top_k_is_a_prefix(scores in proptest::collection::vec(0.0f64..2.0, 1..20), a in 1usize..20, b in 1usize..20) {
            let d = scores.len();
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
            let ranking = FeatureRanking { scores, order, n_components: 1 };
            let (k1, k2) = (a.min(b).min(d), a.max(b).min(d));
            let s1 = select_top_k(&ranking, k1).unwrap();
            let s2 = select_top_k(&ranking, k2).unwrap();
            proptest::prop_assert!(s1.indices.iter().all(|i| s2.indices.contains(i)));
        }
    }
}
