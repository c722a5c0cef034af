//! `safe`: run the anomaly detection pipeline end to end or one stage at a
//! time.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use safe_core::detect::{fit_detector, Detector, DetectorKind};
use safe_core::feature_select::{select_features, RankingReport};
use safe_core::image_map::{fit_layout, ImageSet, LayoutConfig, PixelLayout};
use safe_core::ingest::{self, Dataset, LoadOptions, Normalizer, SplitSpec};
use safe_core::mae::{encode_set, train, MaeConfig, MaeModel};
use safe_core::pipeline::{self, synthetic, PipelineConfig};
use safe_core::{Result, SafeError};

#[derive(Parser)]
#[command(name = "safe", version, about = "Self-supervised anomaly detection for network flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a raw table 60/20/20 and min-max normalize it.
    Preprocess(PreprocessArgs),
    /// Rank features by PCA loadings and keep the top k.
    SelectFeatures(SelectArgs),
    /// Fit the feature-to-pixel layout.
    FitLayout(FitLayoutArgs),
    /// Render a normalized table as images.
    Map(MapArgs),
    /// Train the masked autoencoder on the normal images of a set.
    TrainMae(TrainMaeArgs),
    /// Encode images into latent vectors.
    Extract(ExtractArgs),
    /// Search and fit a novelty detector on normal latent vectors.
    FitDetector(FitDetectorArgs),
    /// Score latent vectors with a fitted detector.
    Score(ScoreArgs),
    /// Run every stage from a TOML config.
    Run(RunArgs),
    /// Compare the pipeline with and without feature selection.
    AblateFeatures(RunArgs),
    /// Compare detectors on one shared representation.
    AblateDetectors(AblateDetectorsArgs),
    /// Write a synthetic labelled flow table.
    Synth(SynthArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "label")]
    label_col: String,
    /// Comma-separated label values that mark attacks.
    #[arg(long, value_delimiter = ',', conflicts_with = "normal_values")]
    attack_values: Vec<String>,
    /// Comma-separated label values that mark normal rows; all others are attacks.
    #[arg(long, value_delimiter = ',')]
    normal_values: Vec<String>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// Normalized training table; only its normal rows are used.
    #[arg(long)]
    train: PathBuf,
    #[arg(long, default_value_t = 31)]
    k: usize,
    #[arg(long, default_value_t = 0.95)]
    evr_target: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitLayoutArgs {
    #[arg(long)]
    train: PathBuf,
    /// Ranking from `select-features`; without it every column is placed.
    #[arg(long)]
    ranking: Option<PathBuf>,
    /// Normalizer whose ranges are recorded in the layout.
    #[arg(long)]
    normalizer: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    grid: usize,
    #[arg(long)]
    perplexity: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    layout: PathBuf,
    /// Normalized table.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainMaeArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.75)]
    mask_ratio: f64,
    #[arg(long, default_value_t = 16)]
    latent: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitDetectorArgs {
    /// Training latents; only rows labelled normal are used.
    #[arg(long)]
    latents: PathBuf,
    #[arg(long)]
    val_latents: PathBuf,
    /// Table with a `label` column; defaults to the labels in `--val-latents`.
    #[arg(long)]
    val_labels: Option<PathBuf>,
    #[arg(long, default_value = "lof")]
    detector: DetectorKind,
    #[arg(long, default_value_t = 40)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    detector_file: PathBuf,
    #[arg(long)]
    latents: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateDetectorsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "lof,iforest,pca")]
    detectors: Vec<DetectorKind>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20_000)]
    rows: usize,
    #[arg(long, default_value_t = 25)]
    informative: usize,
    #[arg(long, default_value_t = 15)]
    noise: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SafeError::io(dir, e))
}

fn normal_rows(ds: &Dataset) -> Result<Dataset> {
    ingest::filter_normal(ds)
}

fn latents_table(z: Array2<f64>, labels: &[u8]) -> Result<Dataset> {
    let names = (0..z.ncols()).map(|i| format!("z{i}")).collect();
    Dataset::new(z, labels.to_vec(), names)
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let mut opts = if a.normal_values.is_empty() {
        if a.attack_values.is_empty() {
            return Err(SafeError::Config("pass --attack-values or --normal-values".into()));
        }
        LoadOptions::new(a.label_col, a.attack_values)
    } else {
        LoadOptions::with_normal_labels(a.label_col, a.normal_values)
    };
    if !a.delimiter.is_ascii() {
        return Err(SafeError::Config("delimiter must be ASCII".into()));
    }
    opts.delimiter = a.delimiter as u8;
    let ds = ingest::load_dataset(&a.input, &opts)?;
    let split = ingest::split(
        &ds,
        &SplitSpec {
            seed: a.seed,
            ..SplitSpec::default()
        },
    )?;
    let normalizer = ingest::fit_normalizer(&normal_rows(&split.train)?)?;
    create_dir(&a.out)?;
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        ingest::write_dataset(&normalizer.apply(part)?, a.out.join(format!("{name}.csv")))?;
    }
    normalizer.save(a.out.join("normalizer.json"))?;
    println!(
        "{} rows x {} features -> train {}, val {}, test {} in {}",
        ds.n_rows(),
        ds.n_features(),
        split.train.n_rows(),
        split.val.n_rows(),
        split.test.n_rows(),
        a.out.display()
    );
    Ok(())
}

fn select(a: SelectArgs) -> Result<()> {
    let train = normal_rows(&ingest::read_dataset(&a.train)?)?;
    let (ranking, subset) = select_features(train.features(), a.k, a.evr_target)?;
    let report = RankingReport::new(train.column_names(), &ranking, &subset, a.evr_target);
    report.save(&a.out)?;
    println!(
        "{} components reach {}; kept {}",
        report.n_components,
        a.evr_target,
        report.selected_names().join(", ")
    );
    Ok(())
}

fn fit_layout_cmd(a: FitLayoutArgs) -> Result<()> {
    let mut train = normal_rows(&ingest::read_dataset(&a.train)?)?;
    if let Some(path) = &a.ranking {
        train = train.select_named(&RankingReport::load(path)?.selected_names())?;
    }
    let cfg = LayoutConfig {
        grid_size: a.grid,
        perplexity: a.perplexity,
        iterations: a.iterations,
        seed: a.seed,
        ..LayoutConfig::default()
    };
    let fit = fit_layout(&train, &cfg)?;
    let mut layout = fit.layout;
    if let Some(path) = &a.normalizer {
        layout.attach_scalers(&Normalizer::load(path)?);
    }
    layout.save(&a.out)?;
    println!(
        "placed {} features on a {}x{} grid; final KL {:.4}{}",
        layout.k(),
        a.grid,
        a.grid,
        fit.embedding.kl_history.last().copied().unwrap_or(f64::NAN),
        if layout.degenerate_framing { " (degenerate framing)" } else { "" }
    );
    Ok(())
}

fn map(a: MapArgs) -> Result<()> {
    let layout = PixelLayout::load(&a.layout)?;
    let images = layout.transform_dataset(&ingest::read_dataset(&a.input)?)?;
    images.save(&a.out)?;
    println!("wrote {} images", images.len());
    Ok(())
}

fn train_mae_cmd(a: TrainMaeArgs) -> Result<()> {
    let all = ImageSet::load(&a.images)?;
    let normal: Vec<usize> = (0..all.len()).filter(|&i| all.labels[i] == 0).collect();
    let images = all.subset(&normal);
    let cfg = MaeConfig {
        grid_size: images.grid_size,
        latent_dim: a.latent,
        mask_ratio: a.mask_ratio,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed: a.seed,
        ..MaeConfig::default()
    };
    let mut model = MaeModel::new(cfg)?;
    let report = train(&mut model, &images)?;
    model.save(&a.out)?;
    for (epoch, loss) in report.epoch_loss.iter().enumerate() {
        println!("epoch {:>3}  loss {loss:.6}", epoch + 1);
    }
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let model = MaeModel::load(&a.model)?;
    let images = ImageSet::load(&a.images)?;
    let z = encode_set(&model, &images)?;
    ingest::write_dataset(&latents_table(z, &images.labels)?, &a.out)?;
    println!("wrote {} latent vectors", images.len());
    Ok(())
}

fn fit_detector_cmd(a: FitDetectorArgs) -> Result<()> {
    let train = normal_rows(&ingest::read_dataset(&a.latents)?)?;
    let val = ingest::read_dataset(&a.val_latents)?;
    let labels = match &a.val_labels {
        Some(path) => ingest::read_dataset(path)?.labels().to_vec(),
        None => val.labels().to_vec(),
    };
    let fit = fit_detector(a.detector, train.features(), val.features(), &labels, a.budget, a.seed)?;
    fit.detector.save(&a.out)?;
    println!(
        "{} threshold {} validation F1 {:.4}",
        fit.detector.describe(),
        fit.detector.threshold(),
        fit.val_f1
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let detector = Detector::load(&a.detector_file)?;
    let latents = ingest::read_dataset(&a.latents)?;
    let scores = detector.score_all(latents.features())?;
    let predictions = safe_core::detect::classify_scores(&scores, detector.threshold());
    let ids: Vec<usize> = (0..scores.len()).collect();
    pipeline::write_scores(&a.out, &ids, latents.labels(), &scores, &predictions)?;
    let flagged = predictions.iter().filter(|&&p| p == 1).count();
    println!("scored {} vectors, {flagged} flagged", scores.len());
    Ok(())
}

fn load_config(path: &Path, out: Option<PathBuf>) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(path)?;
    if out.is_some() {
        cfg.out_dir = out;
    }
    Ok(cfg)
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.out)?;
    let out = pipeline::run_pipeline(&cfg)?;
    print!("{}", out.report.to_table());
    if let Some(dir) = &cfg.out_dir {
        println!("artifacts in {}", dir.display());
    }
    Ok(())
}

fn print_arm(arm: &pipeline::ArmReport) {
    println!(
        "{:<28} k={:<3} grid={:<3} {:<40} val F1 {:.4}  test P {:.4} R {:.4} F1 {:.4}",
        arm.label, arm.k, arm.grid_size, arm.detector, arm.val_f1, arm.test.precision, arm.test.recall, arm.test.f1
    );
}

fn ablate_features(a: RunArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.out)?;
    let result = pipeline::ablation_feature_selection(&cfg)?;
    print_arm(&result.with_fs);
    print_arm(&result.without_fs);
    if result.grid_raised {
        println!("grid raised to {} for the arm without selection", result.without_fs.grid_size);
    }
    println!("F1 delta (with - without): {:+.4}", result.f1_delta);
    if let Some(dir) = &cfg.out_dir {
        create_dir(dir)?;
        write_json(&dir.join("ablation_features.json"), &result)?;
    }
    Ok(())
}

fn ablate_detectors(a: AblateDetectorsArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.out)?;
    let arms = pipeline::ablation_detector_swap(&cfg, &a.detectors)?;
    for arm in &arms {
        print_arm(arm);
    }
    if let Some(dir) = &cfg.out_dir {
        create_dir(dir)?;
        write_json(&dir.join("ablation_detectors.json"), &arms)?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| SafeError::io(path, e))
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = synthetic::SyntheticConfig {
        n_rows: a.rows,
        n_informative: a.informative,
        n_noise: a.noise,
        seed: a.seed,
        ..Default::default()
    };
    let ds = synthetic::generate(&cfg)?;
    ingest::write_dataset(&ds, &a.out)?;
    println!("wrote {} rows x {} features to {}", ds.n_rows(), ds.n_features(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::SelectFeatures(a) => select(a),
        Command::FitLayout(a) => fit_layout_cmd(a),
        Command::Map(a) => map(a),
        Command::TrainMae(a) => train_mae_cmd(a),
        Command::Extract(a) => extract(a),
        Command::FitDetector(a) => fit_detector_cmd(a),
        Command::Score(a) => score(a),
        Command::Run(a) => run(a),
        Command::AblateFeatures(a) => ablate_features(a),
        Command::AblateDetectors(a) => ablate_detectors(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
