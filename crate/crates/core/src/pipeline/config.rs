//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticConfig;
use crate::detect::DetectorKind;
use crate::error::{Result, SafeError};
use crate::image_map::LayoutConfig;
use crate::ingest::{LoadOptions, SplitSpec};
use crate::mae::{MaeConfig, MaskScope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Delimited table with a header row. Exactly one of `path` and
    /// `synthetic` must be set.
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
    pub label_column: String,
    /// Raw label values that mark attacks.
    pub positive_labels: Vec<String>,
    /// Alternative to `positive_labels`: values that mark normal rows.
    pub normal_labels: Option<Vec<String>>,
    pub delimiter: char,
    /// Keep a seeded uniform sample of at most this many rows.
    pub max_rows: Option<usize>,
    pub sample_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            synthetic: None,
            label_column: "label".into(),
            positive_labels: vec!["1".into()],
            normal_labels: None,
            delimiter: ',',
            max_rows: None,
            sample_seed: 0,
        }
    }
}

impl DataConfig {
    pub fn load_options(&self) -> Result<LoadOptions> {
        if !self.delimiter.is_ascii() {
            return Err(SafeError::Config(format!("delimiter `{}` is not ASCII", self.delimiter)));
        }
        let mut opts = match &self.normal_labels {
            Some(normal) => LoadOptions::with_normal_labels(self.label_column.clone(), normal.iter().cloned()),
            None => LoadOptions::new(self.label_column.clone(), self.positive_labels.iter().cloned()),
        };
        opts.delimiter = self.delimiter as u8;
        Ok(opts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Number of features kept.
    pub k: usize,
    /// Cumulative explained variance the ranking components must reach.
    pub evr_target: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { k: 31, evr_target: 0.95 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskCells {
    /// Any grid cell may be masked.
    #[default]
    All,
    /// Only cells that carry a feature.
    Occupied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaeSection {
    pub latent_dim: usize,
    pub mask_ratio: f64,
    pub mask_cells: MaskCells,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for MaeSection {
    fn default() -> Self {
        let d = MaeConfig::default();
        MaeSection {
            latent_dim: d.latent_dim,
            mask_ratio: d.mask_ratio,
            mask_cells: MaskCells::All,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            adam_beta1: d.adam_beta1,
            adam_beta2: d.adam_beta2,
            adam_epsilon: d.adam_epsilon,
            seed: d.seed,
        }
    }
}

impl MaeSection {
    /// Model settings for a grid whose occupied cells are `occupied`.
    pub fn model_config(&self, grid_size: usize, occupied: &[usize]) -> MaeConfig {
        MaeConfig {
            grid_size,
            latent_dim: self.latent_dim,
            mask_ratio: self.mask_ratio,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            seed: self.seed,
            mask_scope: match self.mask_cells {
                MaskCells::All => MaskScope::AllCells,
                MaskCells::Occupied => MaskScope::Cells {
                    cells: occupied.to_vec(),
                },
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub kind: DetectorKind,
    /// Hyperparameter trials.
    pub budget: usize,
    pub seed: u64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            kind: DetectorKind::Lof,
            budget: 40,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Test rows timed through the single-sample path; 0 skips timing.
    pub latency_samples: usize,
    /// Also fit LOF directly on the normalized features for comparison.
    pub raw_baseline: bool,
    /// Abort if any fit step sees rows other than normal training rows.
    pub leakage_guard: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            latency_samples: 1000,
            raw_baseline: false,
            leakage_guard: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Where artifacts are written; nothing is written when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub split: SplitSpec,
    pub features: FeatureConfig,
    pub layout: LayoutConfig,
    pub mae: MaeSection,
    pub detector: DetectorSection,
    pub evaluation: EvaluationSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SafeError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative data paths are resolved against the config file.
        if let (Some(data), Some(dir)) = (&cfg.data.path, path.parent()) {
            if data.is_relative() {
                cfg.data.path = Some(dir.join(data));
            }
        }
        Ok(cfg)
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SafeError::Config(m));
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => return fail("set either data.path or data.synthetic, not both".into()),
            (None, None) => return fail("no data source: set data.path or data.synthetic".into()),
            (None, Some(s)) => s.validate()?,
            (Some(_), None) => {}
        }
        self.data.load_options()?;
        if self.data.max_rows.is_some_and(|n| n < 5) {
            return fail("data.max_rows must be at least 5".into());
        }
        self.split.validate()?;
        let FeatureConfig { k, evr_target } = self.features;
        if k == 0 {
            return fail("features.k must be at least 1".into());
        }
        if !(evr_target > 0.0 && evr_target <= 1.0) {
            return fail(format!("features.evr_target {evr_target} outside (0, 1]"));
        }
        let g = self.layout.grid_size;
        if g < 2 || !g.is_multiple_of(2) {
            return fail(format!("layout.grid_size {g} must be even and at least 2"));
        }
        if g * g < k {
            return fail(format!("{k} features do not fit on a {g}x{g} grid"));
        }
        if k < 4 {
            return fail(format!("features.k = {k}; the layout needs at least 4 features"));
        }
        if self.layout.iterations == 0 || self.layout.max_samples < 2 {
            return fail("layout.iterations and layout.max_samples must be positive".into());
        }
        if let Some(p) = self.layout.perplexity {
            if !(p > 0.0 && p < k as f64) {
                return fail(format!("layout.perplexity {p} must lie in (0, k)"));
            }
        }
        self.mae.model_config(g, &[0]).validate()?;
        if self.detector.budget == 0 {
            return fail("detector.budget must be at least 1".into());
        }
        if let Some(n) = self.data.synthetic.as_ref().map(SyntheticConfig::n_features) {
            self.check_feature_count(n)?;
        }
        Ok(())
    }

    /// Checks that `k` fits the `d` columns of the dataset.
    pub fn check_feature_count(&self, d: usize) -> Result<()> {
        if self.features.k > d {
            return Err(SafeError::Config(format!(
                "features.k = {} exceeds the {d} feature columns",
                self.features.k
            )));
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a hash of the settings (the output directory is
    /// not part of it).
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = None;
        let text = serde_json::to_string(&canonical).expect("config serializes");
        format!("{:016x}", fnv1a(text.as_bytes()))
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[data]
path = "flows.csv"
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.features.k, 31);
        assert_eq!(cfg.layout.grid_size, 8);
        assert_eq!(cfg.mae.epochs, 20);
        assert_eq!(cfg.mae.mask_ratio, 0.75);
        assert_eq!(cfg.detector.kind, DetectorKind::Lof);
        assert_eq!(cfg.detector.budget, 40);
        assert_eq!(cfg.split.train_frac, 0.6);
    }

    #[test]
    fn inconsistent_settings_are_config_errors() {
        for extra in [
            "[features]\nk = 65",
            "[layout]\ngrid_size = 7",
            "[detector]\nbudget = 0",
            "[mae]\nmask_ratio = 1.5",
            "[split]\ntrain_frac = 0.9\nval_frac = 0.2\ntest_frac = 0.2\nseed = 0",
        ] {
            let err = PipelineConfig::from_toml(&format!("{MINIMAL}\n{extra}")).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{extra}: {err}");
        }
        assert!(PipelineConfig::from_toml("[data]\n").is_err());
        assert!(PipelineConfig::from_toml("[data]\npath = 'a'\nbogus = 1").is_err());
    }

    #[test]
    fn k_beyond_synthetic_width_rejected() {
        let text = "[data.synthetic]\nn_rows = 100\nn_informative = 10\nn_noise = 5\n[features]\nk = 16";
        assert!(PipelineConfig::from_toml(text).is_err());
    }

    #[test]
    fn fingerprint_ignores_output_dir() {
        let mut a = PipelineConfig::from_toml(MINIMAL).unwrap();
        let b = a.clone();
        a.out_dir = Some("elsewhere".into());
        assert_eq!(a.fingerprint(), b.fingerprint());
        a.features.k = 30;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
