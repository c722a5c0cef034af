//! End-to-end orchestration: ingest, feature selection, image layout, MAE,
//! detector and evaluation, plus the ablation studies and latency
//! measurement built on the same stages.

pub mod config;
pub mod metrics;
pub mod synthetic;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::detect::{fit_detector, Detector, DetectorFit, DetectorKind, SearchResult};
use crate::error::{Result, SafeError};
use crate::feature_select::{select_features, RankingReport};
use crate::image_map::{fit_layout, LayoutConfig, PixelLayout};
use crate::ingest::{self, Dataset, Normalizer};
use crate::mae::{encode_set, train, MaeModel, TrainReport};

pub use config::{fnv1a, PipelineConfig};
pub use metrics::{evaluate, Confusion, Metrics};
pub use synthetic::SyntheticConfig;

/// Records which rows each fit step saw and, when enabled, rejects any row
/// that is not a normal training row.
#[derive(Debug, Clone)]
pub struct LeakageGuard {
    enabled: bool,
    allowed: HashSet<usize>,
    audits: Vec<FitAudit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitAudit {
    pub stage: String,
    pub rows: usize,
    /// FNV-1a hash of the sorted source row ids.
    pub fingerprint: String,
}

pub fn rows_fingerprint(row_ids: &[usize]) -> String {
    let mut sorted = row_ids.to_vec();
    sorted.sort_unstable();
    let bytes: Vec<u8> = sorted.iter().flat_map(|r| (*r as u64).to_le_bytes()).collect();
    format!("{:016x}", fnv1a(&bytes))
}

impl LeakageGuard {
    /// Allows exactly the normal rows of `train`.
    pub fn new(train: &Dataset, enabled: bool) -> Self {
        let allowed = train
            .row_ids()
            .iter()
            .zip(train.labels())
            .filter(|(_, &y)| y == 0)
            .map(|(&r, _)| r)
            .collect();
        LeakageGuard {
            enabled,
            allowed,
            audits: Vec::new(),
        }
    }

    pub fn check(&mut self, stage: &str, row_ids: &[usize], labels: &[u8]) -> Result<()> {
        if self.enabled {
            if let Some(pos) = labels.iter().position(|&y| y != 0) {
                return Err(SafeError::Leakage {
                    stage: stage.into(),
                    detail: format!("attack row {} in the fit input", row_ids[pos]),
                });
            }
            if let Some(r) = row_ids.iter().find(|r| !self.allowed.contains(r)) {
                return Err(SafeError::Leakage {
                    stage: stage.into(),
                    detail: format!("row {r} is not a training row"),
                });
            }
        }
        self.audits.push(FitAudit {
            stage: stage.into(),
            rows: row_ids.len(),
            fingerprint: rows_fingerprint(row_ids),
        });
        Ok(())
    }

    pub fn audits(&self) -> &[FitAudit] {
        &self.audits
    }
}

fn timed<T>(timings: &mut Vec<StageTime>, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage));
    timings.push(StageTime {
        stage: stage.into(),
        seconds: start.elapsed().as_secs_f64(),
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

/// Data after ingest: split, normalized with ranges from normal training
/// rows.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub normalizer: Normalizer,
    pub train_normal: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Test rows before normalization, for timing the raw-input path.
    pub test_raw: Dataset,
    pub summary: DataSummary,
    pub guard: LeakageGuard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSummary {
    pub rows: usize,
    pub features: usize,
    pub train: usize,
    pub train_normal: usize,
    pub val: usize,
    pub val_attacks: usize,
    pub test: usize,
    pub test_attacks: usize,
}

fn attacks(ds: &Dataset) -> usize {
    ds.labels().iter().filter(|&&y| y == 1).count()
}

/// Number of feature columns in a table, read from its header.
fn peek_feature_count(path: &Path, cfg: &PipelineConfig) -> Result<usize> {
    let opts = cfg.data.load_options()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => SafeError::io(path, io),
            other => SafeError::Data(format!("{}: {other:?}", path.display())),
        })?;
    Ok(reader.headers()?.len().saturating_sub(1))
}

/// Loads (or generates) the data and fits the normalizer.
pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    if let Some(path) = &cfg.data.path {
        cfg.check_feature_count(peek_feature_count(path, cfg)?)?;
    }
    let raw = match (&cfg.data.path, &cfg.data.synthetic) {
        (Some(path), _) => ingest::load_dataset(path, &cfg.data.load_options()?)?,
        (None, Some(s)) => synthetic::generate(s)?,
        (None, None) => unreachable!("validated"),
    };
    let raw = match cfg.data.max_rows {
        Some(cap) if raw.n_rows() > cap => {
            let mut rows = rand::seq::index::sample(&mut crate::rng::seeded(cfg.data.sample_seed), raw.n_rows(), cap).into_vec();
            rows.sort_unstable();
            raw.subset(&rows)
        }
        _ => raw,
    };
    cfg.check_feature_count(raw.n_features())?;
    let split = ingest::split(&raw, &cfg.split)?;
    let mut guard = LeakageGuard::new(&split.train, cfg.evaluation.leakage_guard);
    let train_normal_raw = ingest::filter_normal(&split.train)?;
    guard.check("normalize", train_normal_raw.row_ids(), train_normal_raw.labels())?;
    let normalizer = ingest::fit_normalizer(&train_normal_raw)?;
    let summary = DataSummary {
        rows: raw.n_rows(),
        features: raw.n_features(),
        train: split.train.n_rows(),
        train_normal: train_normal_raw.n_rows(),
        val: split.val.n_rows(),
        val_attacks: attacks(&split.val),
        test: split.test.n_rows(),
        test_attacks: attacks(&split.test),
    };
    Ok(Prepared {
        train_normal: normalizer.apply(&train_normal_raw)?,
        val: normalizer.apply(&split.val)?,
        test: normalizer.apply(&split.test)?,
        test_raw: split.test,
        normalizer,
        summary,
        guard,
    })
}

/// Everything upstream of the detector: selected features, layout, trained
/// MAE and the latent vectors of each partition.
#[derive(Debug, Clone)]
pub struct Representation {
    pub ranking: RankingReport,
    pub layout: PixelLayout,
    pub tsne_final_kl: f64,
    pub mae: MaeModel,
    pub training: TrainReport,
    pub z_train: Array2<f64>,
    pub z_val: Array2<f64>,
    pub z_test: Array2<f64>,
    pub val_labels: Vec<u8>,
    pub test_labels: Vec<u8>,
    pub test_row_ids: Vec<usize>,
}

impl Representation {
    /// FNV-1a hash of the serialized MAE.
    pub fn mae_fingerprint(&self) -> String {
        let mut bytes = Vec::new();
        self.mae.write_to(&mut bytes).expect("writing to memory");
        format!("{:016x}", fnv1a(&bytes))
    }
}

/// Fits feature selection (keeping `k`), the layout on a `grid_size` grid
/// and the MAE, then encodes every partition.
pub fn fit_representation(
    cfg: &PipelineConfig,
    prep: &mut Prepared,
    k: usize,
    grid_size: usize,
    timings: &mut Vec<StageTime>,
) -> Result<Representation> {
    let guard = &mut prep.guard;
    let train_normal = &prep.train_normal;
    let ranking = timed(timings, "feature_select", || {
        guard.check("feature_select", train_normal.row_ids(), train_normal.labels())?;
        let (ranking, subset) = select_features(train_normal.features(), k, cfg.features.evr_target)?;
        Ok(RankingReport::new(
            train_normal.column_names(),
            &ranking,
            &subset,
            cfg.features.evr_target,
        ))
    })?;
    let selected = ranking.selected_names();

    let (layout, tsne_final_kl, images) = timed(timings, "image_map", || {
        let train_sel = train_normal.select_named(&selected)?;
        guard.check("image_map", train_sel.row_ids(), train_sel.labels())?;
        let layout_cfg = LayoutConfig {
            grid_size,
            ..cfg.layout.clone()
        };
        let fit = fit_layout(&train_sel, &layout_cfg)?;
        let mut layout = fit.layout;
        layout.attach_scalers(&prep.normalizer);
        let images = [
            layout.transform_dataset(train_normal)?,
            layout.transform_dataset(&prep.val)?,
            layout.transform_dataset(&prep.test)?,
        ];
        let kl = fit.embedding.kl_history.last().copied().unwrap_or(f64::NAN);
        Ok((layout, kl, images))
    })?;
    let [train_images, val_images, test_images] = images;

    let (mae, training) = timed(timings, "mae", || {
        guard.check("mae", &train_images.row_ids, &train_images.labels)?;
        let mut mae = MaeModel::new(cfg.mae.model_config(grid_size, &layout.occupied()))?;
        let training = train(&mut mae, &train_images)?;
        Ok((mae, training))
    })?;

    let (z_train, z_val, z_test) = timed(timings, "encode", || {
        Ok((
            encode_set(&mae, &train_images)?,
            encode_set(&mae, &val_images)?,
            encode_set(&mae, &test_images)?,
        ))
    })?;
    guard
        .check("detect", &train_images.row_ids, &train_images.labels)
        .map_err(|e| e.in_stage("detect"))?;

    Ok(Representation {
        ranking,
        layout,
        tsne_final_kl,
        mae,
        training,
        z_train,
        z_val,
        z_test,
        val_labels: val_images.labels,
        test_labels: test_images.labels,
        test_row_ids: test_images.row_ids,
    })
}

/// A detector fitted on training latents and evaluated on test latents.
#[derive(Debug, Clone)]
pub struct DetectorOutcome {
    pub fit: DetectorFit,
    pub test_scores: Vec<f64>,
    pub predictions: Vec<u8>,
    pub metrics: Metrics,
}

/// Vectors a detector is fitted, tuned and tested on.
#[derive(Debug, Clone, Copy)]
pub struct DetectorData<'a> {
    pub train: &'a Array2<f64>,
    pub val: &'a Array2<f64>,
    pub val_labels: &'a [u8],
    pub test: &'a Array2<f64>,
    pub test_labels: &'a [u8],
}

impl Representation {
    pub fn detector_data(&self) -> DetectorData<'_> {
        DetectorData {
            train: &self.z_train,
            val: &self.z_val,
            val_labels: &self.val_labels,
            test: &self.z_test,
            test_labels: &self.test_labels,
        }
    }
}

pub fn fit_and_evaluate(kind: DetectorKind, budget: usize, seed: u64, data: DetectorData<'_>) -> Result<DetectorOutcome> {
    let fit = fit_detector(kind, data.train, data.val, data.val_labels, budget, seed)?;
    let test_scores = fit.detector.score_all(data.test)?;
    let predictions = crate::detect::classify_scores(&test_scores, fit.detector.threshold());
    let metrics = evaluate(&predictions, data.test_labels)?;
    Ok(DetectorOutcome {
        fit,
        test_scores,
        predictions,
        metrics,
    })
}

/// Per-sample latency of the full raw-row path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
}

/// Classifies one raw flow at a time: normalize, render, encode, score,
/// threshold.
pub struct InferenceEngine<'a> {
    normalizer: Normalizer,
    layout: &'a PixelLayout,
    mae: &'a MaeModel,
    detector: &'a Detector,
}

impl<'a> InferenceEngine<'a> {
    /// `normalizer` may cover more columns than the layout; only the
    /// layout's features are kept, in layout order.
    pub fn new(normalizer: &Normalizer, layout: &'a PixelLayout, mae: &'a MaeModel, detector: &'a Detector) -> Result<Self> {
        let columns = layout
            .names()
            .iter()
            .map(|n| {
                normalizer
                    .columns
                    .iter()
                    .find(|c| &c.name == n)
                    .cloned()
                    .ok_or_else(|| SafeError::Data(format!("normalizer has no column `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if mae.config.grid_size != layout.grid_size || detector.dim() != mae.latent_dim() {
            return Err(SafeError::InvalidArgument("layout, MAE and detector do not fit together".into()));
        }
        Ok(InferenceEngine {
            normalizer: Normalizer { columns },
            layout,
            mae,
            detector,
        })
    }

    /// Score and prediction for one raw row holding the layout's features.
    pub fn classify(&self, raw: &[f64]) -> Result<(f64, u8)> {
        let mut scaled = vec![0.0; raw.len()];
        self.normalizer.scale_row(raw, &mut scaled);
        let image = self.layout.transform_sample(ndarray::ArrayView1::from(&scaled), 0)?;
        let x: Vec<f64> = image.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
        let z = self.mae.encode(&x)?;
        let score = self.detector.score(ndarray::ArrayView1::from(&z));
        Ok((score, u8::from(score > self.detector.threshold())))
    }
}

/// Times `n_samples` single-row classifications over `rows` (cycled), after
/// an untimed warm-up.
pub fn measure_inference(engine: &InferenceEngine, rows: &Array2<f64>, n_samples: usize) -> Result<LatencyStats> {
    if rows.nrows() == 0 || n_samples == 0 {
        return Err(SafeError::InvalidArgument("latency measurement needs rows and samples".into()));
    }
    let row = |i: usize| rows.row(i % rows.nrows()).to_vec();
    let warmup = n_samples.min(50);
    for i in 0..warmup {
        engine.classify(&row(i))?;
    }
    let mut ms = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let x = row(i);
        let start = Instant::now();
        std::hint::black_box(engine.classify(&x)?);
        ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = ms.iter().sum::<f64>() / n_samples as f64;
    ms.sort_by(f64::total_cmp);
    let median_ms = if n_samples % 2 == 1 {
        ms[n_samples / 2]
    } else {
        (ms[n_samples / 2 - 1] + ms[n_samples / 2]) / 2.0
    };
    Ok(LatencyStats {
        samples: n_samples,
        warmup,
        mean_ms,
        median_ms,
    })
}

/// Wall-clock measurements; the only part of a report that varies between
/// identical runs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<StageTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<LatencyStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_fingerprint: String,
    pub data: DataSummary,
    pub n_components: usize,
    pub selected_features: Vec<String>,
    pub grid_size: usize,
    pub layout_degenerate_framing: bool,
    pub tsne_final_kl: f64,
    pub mae_epoch_loss: Vec<f64>,
    pub mae_fingerprint: String,
    pub detector: String,
    pub threshold: f64,
    /// How the decision threshold was chosen.
    pub threshold_rule: String,
    pub val_f1: f64,
    pub test: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_baseline: Option<Metrics>,
    pub search: SearchResult,
    pub leakage_audit: Vec<FitAudit>,
    pub timings: Timings,
}

fn threshold_rule(kind: DetectorKind) -> &'static str {
    match kind {
        DetectorKind::PcaReconstruction => "percentile of training errors, percentile tuned on validation F1",
        _ => "tuned to maximize validation F1",
    }
}

impl EvalReport {
    /// The report with wall-clock timings cleared, for run-to-run
    /// comparisons.
    pub fn without_timings(&self) -> EvalReport {
        EvalReport {
            timings: Timings::default(),
            ..self.clone()
        }
    }

    /// Plain-text summary table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let d = &self.data;
        let _ = writeln!(s, "config       {}", self.config_fingerprint);
        let _ = writeln!(
            s,
            "data         {} rows x {} features; train {} ({} normal), val {}, test {} ({} attacks)",
            d.rows, d.features, d.train, d.train_normal, d.val, d.test, d.test_attacks
        );
        let _ = writeln!(
            s,
            "features     {} kept, ranked over {} components",
            self.selected_features.len(),
            self.n_components
        );
        let _ = writeln!(
            s,
            "layout       {0}x{0}{1}, final KL {2:.4}",
            self.grid_size,
            if self.layout_degenerate_framing { " (degenerate framing)" } else { "" },
            self.tsne_final_kl
        );
        if let Some(last) = self.mae_epoch_loss.last() {
            let _ = writeln!(s, "mae          {} epochs, final loss {last:.6}", self.mae_epoch_loss.len());
        }
        let _ = writeln!(s, "detector     {}", self.detector);
        let _ = writeln!(s, "threshold    {} ({})", self.threshold, self.threshold_rule);
        let _ = writeln!(s, "val f1       {:.4}", self.val_f1);
        let _ = writeln!(s, "test\n{}", self.test);
        if let Some(b) = &self.raw_baseline {
            let _ = writeln!(s, "raw-feature LOF baseline\n{b}");
        }
        for t in &self.timings.stages {
            let _ = writeln!(s, "time         {:<16}{:>10.3} s", t.stage, t.seconds);
        }
        if let Some(l) = &self.timings.inference {
            let _ = writeln!(
                s,
                "latency      mean {:.4} ms, median {:.4} ms over {} samples",
                l.mean_ms, l.median_ms, l.samples
            );
        }
        s
    }
}

/// A full run's outputs, kept in memory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: EvalReport,
    pub prepared: Prepared,
    pub representation: Representation,
    pub outcome: DetectorOutcome,
}

/// LOF searched and fitted directly on the normalized features.
pub fn raw_feature_baseline(cfg: &PipelineConfig, prep: &Prepared) -> Result<DetectorOutcome> {
    fit_and_evaluate(
        DetectorKind::Lof,
        cfg.detector.budget,
        cfg.detector.seed,
        DetectorData {
            train: prep.train_normal.features(),
            val: prep.val.features(),
            val_labels: prep.val.labels(),
            test: prep.test.features(),
            test_labels: prep.test.labels(),
        },
    )
}

/// Runs every stage in order and, when `cfg.out_dir` is set, writes the
/// artifacts there.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut stages = Vec::new();
    let mut prep = timed(&mut stages, "ingest", || prepare(cfg))?;
    let rep = fit_representation(cfg, &mut prep, cfg.features.k, cfg.layout.grid_size, &mut stages)?;
    let outcome = timed(&mut stages, "detect", || {
        fit_and_evaluate(
            cfg.detector.kind,
            cfg.detector.budget,
            cfg.detector.seed,
            rep.detector_data(),
        )
    })?;
    let raw_baseline = if cfg.evaluation.raw_baseline {
        Some(timed(&mut stages, "raw_baseline", || raw_feature_baseline(cfg, &prep))?.metrics)
    } else {
        None
    };
    let inference = if cfg.evaluation.latency_samples > 0 {
        Some(timed(&mut stages, "latency", || {
            let engine = InferenceEngine::new(&prep.normalizer, &rep.layout, &rep.mae, &outcome.fit.detector)?;
            let rows = prep.test_raw.select_named(&rep.layout.names())?;
            measure_inference(&engine, rows.features(), cfg.evaluation.latency_samples)
        })?)
    } else {
        None
    };

    let detector = &outcome.fit.detector;
    let report = EvalReport {
        config_fingerprint: cfg.fingerprint(),
        data: prep.summary,
        n_components: rep.ranking.n_components,
        selected_features: rep.ranking.selected_names(),
        grid_size: rep.layout.grid_size,
        layout_degenerate_framing: rep.layout.degenerate_framing,
        tsne_final_kl: rep.tsne_final_kl,
        mae_epoch_loss: rep.training.epoch_loss.clone(),
        mae_fingerprint: rep.mae_fingerprint(),
        detector: detector.describe(),
        threshold: detector.threshold(),
        threshold_rule: threshold_rule(detector.kind()).into(),
        val_f1: outcome.fit.val_f1,
        test: outcome.metrics,
        raw_baseline,
        search: outcome.fit.search.clone(),
        leakage_audit: prep.guard.audits().to_vec(),
        timings: Timings { stages, inference },
    };
    let out = RunOutput {
        report,
        prepared: prep,
        representation: rep,
        outcome,
    };
    if let Some(dir) = &cfg.out_dir {
        write_artifacts(dir, &out).map_err(|e| e.in_stage("write"))?;
    }
    Ok(out)
}

/// File names written by [`run_pipeline`].
pub mod artifacts {
    pub const REPORT_JSON: &str = "report.json";
    pub const REPORT_TXT: &str = "report.txt";
    pub const NORMALIZER: &str = "normalizer.json";
    pub const RANKING: &str = "ranking.json";
    pub const LAYOUT: &str = "layout.json";
    pub const MAE: &str = "mae.bin";
    pub const DETECTOR: &str = "detector.json";
    pub const SCORES: &str = "scores.csv";
}

/// Writes `row_id,label,score,prediction` lines.
pub fn write_scores(path: &Path, row_ids: &[usize], labels: &[u8], scores: &[f64], predictions: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| SafeError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["row_id", "label", "score", "prediction"])?;
    for i in 0..scores.len() {
        w.write_record([
            row_ids[i].to_string(),
            labels[i].to_string(),
            scores[i].to_string(),
            predictions[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| SafeError::io(path, e))
}

fn write_artifacts(dir: &Path, out: &RunOutput) -> Result<()> {
    use artifacts::*;
    std::fs::create_dir_all(dir).map_err(|e| SafeError::io(dir, e))?;
    let rep = &out.representation;
    ingest::write_json(dir.join(REPORT_JSON), &out.report)?;
    let txt = dir.join(REPORT_TXT);
    std::fs::write(&txt, out.report.to_table()).map_err(|e| SafeError::io(&txt, e))?;
    out.prepared.normalizer.save(dir.join(NORMALIZER))?;
    ingest::write_json(dir.join(RANKING), &rep.ranking)?;
    rep.layout.save(dir.join(LAYOUT))?;
    rep.mae.save(dir.join(MAE))?;
    out.outcome.fit.detector.save(dir.join(DETECTOR))?;
    write_scores(
        &dir.join(SCORES),
        &rep.test_row_ids,
        &rep.test_labels,
        &out.outcome.test_scores,
        &out.outcome.predictions,
    )
}

/// One arm of an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub label: String,
    pub k: usize,
    pub grid_size: usize,
    pub detector: String,
    pub mae_fingerprint: String,
    pub val_f1: f64,
    pub test: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelectionAblation {
    pub with_fs: ArmReport,
    pub without_fs: ArmReport,
    /// The no-selection arm needed a larger grid than configured.
    pub grid_raised: bool,
    /// `with_fs.f1 - without_fs.f1`.
    pub f1_delta: f64,
}

/// Smallest even grid side that holds `d` features and is at least `min`.
pub fn grid_for(d: usize, min: usize) -> usize {
    let side = (d as f64).sqrt().ceil() as usize;
    let side = side.max(min).max(2);
    side + side % 2
}

fn arm(label: &str, cfg: &PipelineConfig, prep: &mut Prepared, k: usize, grid: usize) -> Result<ArmReport> {
    let rep = fit_representation(cfg, prep, k, grid, &mut Vec::new())?;
    let outcome = fit_and_evaluate(
        cfg.detector.kind,
        cfg.detector.budget,
        cfg.detector.seed,
        rep.detector_data(),
    )
    .map_err(|e| e.in_stage("detect"))?;
    Ok(ArmReport {
        label: label.into(),
        k,
        grid_size: grid,
        detector: outcome.fit.detector.describe(),
        mae_fingerprint: rep.mae_fingerprint(),
        val_f1: outcome.fit.val_f1,
        test: outcome.metrics,
    })
}

/// Runs the pipeline once with the configured `k` and once with every
/// feature kept, all else equal.
pub fn ablation_feature_selection(cfg: &PipelineConfig) -> Result<FeatureSelectionAblation> {
    let mut prep = prepare(cfg).map_err(|e| e.in_stage("ingest"))?;
    let d = prep.summary.features;
    let with_fs = arm("with feature selection", cfg, &mut prep, cfg.features.k, cfg.layout.grid_size)?;
    let grid = grid_for(d, cfg.layout.grid_size);
    let without_fs = arm("without feature selection", cfg, &mut prep, d, grid)?;
    Ok(FeatureSelectionAblation {
        f1_delta: with_fs.test.f1 - without_fs.test.f1,
        grid_raised: grid != cfg.layout.grid_size,
        with_fs,
        without_fs,
    })
}

/// Fits the upstream stages once and evaluates each detector on the same
/// latent vectors.
pub fn ablation_detector_swap(cfg: &PipelineConfig, kinds: &[DetectorKind]) -> Result<Vec<ArmReport>> {
    let mut prep = prepare(cfg).map_err(|e| e.in_stage("ingest"))?;
    let rep = fit_representation(cfg, &mut prep, cfg.features.k, cfg.layout.grid_size, &mut Vec::new())?;
    let fingerprint = rep.mae_fingerprint();
    kinds
        .iter()
        .map(|&kind| {
            let outcome = fit_and_evaluate(
                kind,
                cfg.detector.budget,
                cfg.detector.seed,
                rep.detector_data(),
            )
            .map_err(|e| e.in_stage("detect"))?;
            Ok(ArmReport {
                label: kind.to_string(),
                k: cfg.features.k,
                grid_size: cfg.layout.grid_size,
                detector: outcome.fit.detector.describe(),
                mae_fingerprint: fingerprint.clone(),
                val_f1: outcome.fit.val_f1,
                test: outcome.metrics,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_raise_rule() {
        assert_eq!(grid_for(40, 8), 8);
        assert_eq!(grid_for(65, 8), 10);
        assert_eq!(grid_for(81, 8), 10);
        assert_eq!(grid_for(10, 2), 4);
    }

    #[test]
    fn guard_rejects_foreign_rows() {
        let ds = Dataset::new(Array2::zeros((4, 1)), vec![0, 1, 0, 0], vec!["a".into()]).unwrap();
        let mut guard = LeakageGuard::new(&ds, true);
        guard.check("ok", &[0, 2, 3], &[0, 0, 0]).unwrap();
        assert!(matches!(guard.check("x", &[1], &[0]), Err(SafeError::Leakage { .. })));
        assert!(matches!(guard.check("x", &[9], &[0]), Err(SafeError::Leakage { .. })));
        assert!(matches!(guard.check("x", &[0], &[1]), Err(SafeError::Leakage { .. })));
        assert_eq!(guard.audits().len(), 1);
        let mut off = LeakageGuard::new(&ds, false);
        off.check("x", &[1], &[1]).unwrap();
    }

    #[test]
    fn fingerprint_is_order_free() {
        assert_eq!(rows_fingerprint(&[3, 1, 2]), rows_fingerprint(&[1, 2, 3]));
        assert_ne!(rows_fingerprint(&[1, 2]), rows_fingerprint(&[1, 2, 3]));
    }
}
