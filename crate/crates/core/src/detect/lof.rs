//! Local Outlier Factor in novelty mode: densities are estimated on a fixed
//! reference set and new points are scored against it.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Metric;
use crate::error::{Result, SafeError};

/// Floor on mean reachability distances so duplicate-heavy neighborhoods
/// keep a finite density.
pub const REACH_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofModel {
    pub reference: Array2<f64>,
    pub n_neighbors: usize,
    pub metric: Metric,
    /// Distance from each reference point to its `n_neighbors`-th neighbor.
    pub k_distance: Vec<f64>,
    /// Local reachability density of each reference point.
    pub lrd: Vec<f64>,
    pub threshold: f64,
}

#[inline]
fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// The `k` nearest rows of `points` to `query`, ordered by distance then
/// row index. `exclude` skips one row (the query itself for reference points).
pub fn nearest(
    points: &Array2<f64>,
    query: ArrayView1<f64>,
    k: usize,
    metric: Metric,
    exclude: Option<usize>,
) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = points
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, row)| (metric.distance(query, row), i))
        .collect();
    let k = k.min(all.len());
    if k == 0 {
        return Vec::new();
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, by_distance_then_index);
    }
    // copy out rather than truncate so stored lists do not keep O(m) capacity
    let mut top = all[..k].to_vec();
    top.sort_unstable_by(by_distance_then_index);
    top
}

/// Neighbor lists of a set of query points, `k_max` per query.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    pub k_max: usize,
    pub lists: Vec<Vec<(f64, usize)>>,
}

impl NeighborTable {
    /// Neighbors of every reference point among the other reference points.
    pub fn among_reference(reference: &Array2<f64>, k_max: usize, metric: Metric) -> Self {
        let lists = (0..reference.nrows())
            .into_par_iter()
            .map(|i| nearest(reference, reference.row(i), k_max, metric, Some(i)))
            .collect();
        NeighborTable { k_max, lists }
    }

    pub fn for_queries(reference: &Array2<f64>, queries: &Array2<f64>, k_max: usize, metric: Metric) -> Self {
        let lists = (0..queries.nrows())
            .into_par_iter()
            .map(|i| nearest(reference, queries.row(i), k_max, metric, None))
            .collect();
        NeighborTable { k_max, lists }
    }
}

/// Local reachability density from a sorted neighbor list truncated to `k`.
#[inline]
fn lrd_from(neighbors: &[(f64, usize)], k_distance: &[f64]) -> f64 {
    let sum: f64 = neighbors.iter().map(|&(d, o)| k_distance[o].max(d)).sum();
    1.0 / (sum / neighbors.len() as f64).max(REACH_FLOOR)
}

#[inline]
fn lof_from(neighbors: &[(f64, usize)], k_distance: &[f64], lrd: &[f64]) -> f64 {
    let own = lrd_from(neighbors, k_distance);
    let mean_neighbor: f64 = neighbors.iter().map(|&(_, o)| lrd[o]).sum::<f64>() / neighbors.len() as f64;
    mean_neighbor / own
}

/// k-distances and densities of the reference points for a given `k`.
pub fn reference_statistics(table: &NeighborTable, k: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(k >= 1 && k <= table.k_max);
    let k_distance: Vec<f64> = table.lists.iter().map(|l| l[k - 1].0).collect();
    let lrd = table.lists.iter().map(|l| lrd_from(&l[..k], &k_distance)).collect();
    (k_distance, lrd)
}

/// LOF scores of queries whose neighbor lists are precomputed.
pub fn scores_from_table(table: &NeighborTable, k: usize, k_distance: &[f64], lrd: &[f64]) -> Vec<f64> {
    table.lists.iter().map(|l| lof_from(&l[..k], k_distance, lrd)).collect()
}

impl LofModel {
    /// Fits on `reference` (normal training vectors). Requires
    /// `1 <= n_neighbors < reference rows`.
    pub fn fit(reference: Array2<f64>, n_neighbors: usize, metric: Metric) -> Result<Self> {
        let m = reference.nrows();
        if n_neighbors == 0 || n_neighbors >= m {
            return Err(SafeError::InvalidArgument(format!(
                "n_neighbors = {n_neighbors} needs 1 <= n_neighbors < {m} reference points"
            )));
        }
        if reference.iter().any(|v| !v.is_finite()) {
            return Err(SafeError::InvalidArgument("non-finite reference point".into()));
        }
        let table = NeighborTable::among_reference(&reference, n_neighbors, metric);
        let (k_distance, lrd) = reference_statistics(&table, n_neighbors);
        Ok(LofModel {
            reference,
            n_neighbors,
            metric,
            k_distance,
            lrd,
            threshold: 1.5,
        })
    }

    pub fn dim(&self) -> usize {
        self.reference.ncols()
    }

    /// Ratio of the neighbors' mean density to the query's density; values
    /// above 1 mean the query sits in a sparser region than its neighbors.
    pub fn score(&self, query: ArrayView1<f64>) -> f64 {
        let neighbors = nearest(&self.reference, query, self.n_neighbors, self.metric, None);
        lof_from(&neighbors, &self.k_distance, &self.lrd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blob(m: usize, d: usize, sigma: f64, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::seeded(seed);
        Array2::from_shape_fn((m, d), |_| sigma * rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn centroid_of_a_cluster_is_an_inlier() {
        let reference = blob(300, 3, 1.0, 1);
        let center = reference.mean_axis(ndarray::Axis(0)).unwrap();
        let model = LofModel::fit(reference, 20, Metric::Euclidean).unwrap();
        let s = model.score(center.view());
        assert!((0.8..=1.2).contains(&s), "lof {s}");
    }

    #[test]
    fn far_point_is_an_outlier() {
        let reference = blob(500, 2, 0.1, 2);
        let model = LofModel::fit(reference, 20, Metric::Euclidean).unwrap();
        let far = ndarray::array![1.0, 0.0];
        assert!(model.score(far.view()) > 2.0);
    }

    #[test]
    fn duplicates_do_not_blow_up() {
        let reference = Array2::from_elem((30, 2), 0.5);
        let model = LofModel::fit(reference, 5, Metric::Manhattan).unwrap();
        let s = model.score(ndarray::array![0.5, 0.5].view());
        assert!(s.is_finite());
        assert!((s - 1.0).abs() < 1e-12);
        assert!(model.score(ndarray::array![0.6, 0.5].view()) > 1e6);
    }

    #[test]
    fn neighbor_count_must_fit() {
        let reference = blob(10, 2, 1.0, 3);
        assert!(LofModel::fit(reference.clone(), 10, Metric::Euclidean).is_err());
        assert!(LofModel::fit(reference, 0, Metric::Euclidean).is_err());
    }

    #[test]
    fn table_path_matches_model_path_bitwise() {
        let reference = blob(120, 4, 1.0, 4);
        let queries = blob(30, 4, 1.5, 5);
        for metric in Metric::SEARCH_CHOICES {
            let refs = NeighborTable::among_reference(&reference, 25, metric);
            let qs = NeighborTable::for_queries(&reference, &queries, 25, metric);
            for k in [1, 7, 25] {
                let model = LofModel::fit(reference.clone(), k, metric).unwrap();
                let (kd, lrd) = reference_statistics(&refs, k);
                let fast = scores_from_table(&qs, k, &kd, &lrd);
                for (i, f) in fast.iter().enumerate() {
                    assert_eq!(*f, model.score(queries.row(i)));
                }
            }
        }
    }

    #[test]
    fn nearest_breaks_ties_by_index() {
        let pts = ndarray::array![[1.0], [-1.0], [1.0], [0.0]];
        let nn = nearest(&pts, ndarray::array![0.0].view(), 3, Metric::Euclidean, Some(3));
        assert_eq!(nn.iter().map(|p| p.1).collect::<Vec<_>>(), vec![0, 1, 2]);
    }
}
