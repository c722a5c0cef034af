//! Hyperparameter search for each detector kind, scored by validation F1.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::lof::{reference_statistics, scores_from_table, NeighborTable};
use super::threshold::{f1_at, tune_threshold};
use super::tpe::{tpe_search, ParamSpec, ParamValue, SearchResult, SearchSpace};
use super::{Detector, DetectorKind, IsoForestModel, LofModel, Metric, PcaReconModel};
use crate::error::{Result, SafeError};

/// Upper end of the LOF neighbor range.
pub const MAX_NEIGHBORS: usize = 50;
pub const MIN_NEIGHBORS: usize = 5;

/// A detector chosen by search, with its threshold already set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorFit {
    pub detector: Detector,
    pub search: SearchResult,
    /// Validation F1 at the chosen threshold.
    pub val_f1: f64,
}

fn metric_named(name: &str) -> Result<Metric> {
    Metric::SEARCH_CHOICES
        .into_iter()
        .find(|m| m.to_string() == name)
        .ok_or_else(|| SafeError::Config(format!("unknown metric `{name}`")))
}

fn param(params: &[ParamValue], i: usize) -> &ParamValue {
    &params[i]
}

fn as_usize(v: &ParamValue) -> usize {
    v.as_i64().expect("integer parameter").max(0) as usize
}

/// The search space used for `kind` given `m` training vectors of width `d`.
pub fn search_space(kind: DetectorKind, m: usize, d: usize, budget: usize, seed: u64) -> SearchSpace {
    let params = match kind {
        DetectorKind::Lof => {
            let high = MAX_NEIGHBORS.min(m.saturating_sub(1)).max(1);
            vec![
                ParamSpec::int("n_neighbors", MIN_NEIGHBORS.min(high) as i64, high as i64),
                ParamSpec::categorical("metric", Metric::SEARCH_CHOICES.iter().map(|m| m.to_string())),
            ]
        }
        DetectorKind::IsolationForest => vec![
            ParamSpec::int("n_trees", 50, 300),
            ParamSpec::int("subsample", 64.min(m as i64), 1024.min(m as i64)),
        ],
        DetectorKind::PcaReconstruction => vec![
            ParamSpec::int("n_components", 1, d.max(1) as i64),
            ParamSpec::float("percentile", 90.0, 99.9),
        ],
    };
    SearchSpace { params, budget, seed }
}

/// Neighbor tables per metric, built on first use and shared by all trials.
struct LofCache<'a> {
    train: &'a Array2<f64>,
    val: &'a Array2<f64>,
    k_max: usize,
    tables: HashMap<String, (NeighborTable, NeighborTable)>,
}

impl LofCache<'_> {
    fn val_scores(&mut self, k: usize, metric: Metric) -> Vec<f64> {
        let (train, val, k_max) = (self.train, self.val, self.k_max);
        let (refs, queries) = self.tables.entry(metric.to_string()).or_insert_with(|| {
            (
                NeighborTable::among_reference(train, k_max, metric),
                NeighborTable::for_queries(train, val, k_max, metric),
            )
        });
        let (kd, lrd) = reference_statistics(refs, k);
        scores_from_table(queries, k, &kd, &lrd)
    }
}

/// Searches `kind`'s hyperparameters on validation F1 and returns the
/// fitted detector. `train` must hold normal vectors only.
pub fn fit_detector(
    kind: DetectorKind,
    train: &Array2<f64>,
    val: &Array2<f64>,
    val_labels: &[u8],
    budget: usize,
    seed: u64,
) -> Result<DetectorFit> {
    let (m, d) = train.dim();
    if m < 2 {
        return Err(SafeError::Data(format!("{m} training vectors; detectors need at least 2")));
    }
    if val.ncols() != d {
        return Err(SafeError::InvalidArgument(format!(
            "validation vectors have width {} but training vectors {d}",
            val.ncols()
        )));
    }
    if val.nrows() != val_labels.len() {
        return Err(SafeError::InvalidArgument("validation labels do not match vectors".into()));
    }
    if train.iter().chain(val.iter()).any(|v| !v.is_finite()) {
        return Err(SafeError::Numerical("non-finite latent vector".into()));
    }
    let space = search_space(kind, m, d, budget, seed);

    match kind {
        DetectorKind::Lof => {
            let mut cache = LofCache {
                train,
                val,
                k_max: MAX_NEIGHBORS.min(m - 1),
                tables: HashMap::new(),
            };
            let search = tpe_search(&space, |p| {
                let k = as_usize(param(p, 0));
                let metric = metric_named(param(p, 1).as_str().expect("metric"))?;
                Ok(tune_threshold(&cache.val_scores(k, metric), val_labels)?.f1)
            })?;
            let k = as_usize(&search.best.params[0]);
            let metric = metric_named(search.best.params[1].as_str().expect("metric"))?;
            let mut model = LofModel::fit(train.clone(), k, metric)?;
            let choice = tune_threshold(&cache.val_scores(k, metric), val_labels)?;
            model.threshold = choice.threshold;
            Ok(DetectorFit {
                detector: Detector::Lof(model),
                search,
                val_f1: choice.f1,
            })
        }
        DetectorKind::IsolationForest => {
            let fit = |p: &[ParamValue]| -> Result<(IsoForestModel, f64, f64)> {
                let mut model = IsoForestModel::fit(train, as_usize(param(p, 0)), as_usize(param(p, 1)), seed)?;
                let scores: Vec<f64> = val.rows().into_iter().map(|r| model.score(r)).collect();
                let choice = tune_threshold(&scores, val_labels)?;
                model.threshold = choice.threshold;
                Ok((model, choice.threshold, choice.f1))
            };
            let search = tpe_search(&space, |p| Ok(fit(p)?.2))?;
            let (model, _, f1) = fit(&search.best.params)?;
            Ok(DetectorFit {
                detector: Detector::IsolationForest(model),
                search,
                val_f1: f1,
            })
        }
        DetectorKind::PcaReconstruction => {
            let fit = |p: &[ParamValue]| -> Result<(PcaReconModel, f64)> {
                let model = PcaReconModel::fit(train, as_usize(param(p, 0)), param(p, 1).as_f64().expect("float"))?;
                let scores: Vec<f64> = val.rows().into_iter().map(|r| model.score(r)).collect();
                let f1 = f1_at(&scores, val_labels, model.threshold);
                Ok((model, f1))
            };
            let search = tpe_search(&space, |p| Ok(fit(p)?.1))?;
            let (model, f1) = fit(&search.best.params)?;
            Ok(DetectorFit {
                detector: Detector::PcaReconstruction(model),
                search,
                val_f1: f1,
            })
        }
    }
}
