//! A synthetic flow table with a known normal manifold and three attack
//! regimes, used for end-to-end checks and demos.
//!
//! Normal rows draw their informative columns from a correlated Gaussian: a
//! few shared latent factors mixed through a fixed loading matrix plus a
//! little independent noise. Attack rows come from one of three shifted or
//! rescaled copies of that Gaussian: a mean shift, a widened copy with its
//! own offset, and a shrunken copy with another offset. Noise columns are
//! heavy-tailed and identically distributed in both classes.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SafeError};
use crate::ingest::Dataset;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_rows: usize,
    pub n_informative: usize,
    pub n_noise: usize,
    pub n_factors: usize,
    /// Share of attack rows.
    pub attack_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_rows: 20_000,
            n_informative: 25,
            n_noise: 15,
            n_factors: 3,
            attack_fraction: 0.3,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn n_features(&self) -> usize {
        self.n_informative + self.n_noise
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows < 5 || self.n_informative < 2 || self.n_factors == 0 || self.n_factors > self.n_informative {
            return Err(SafeError::Config("synthetic dataset shape is too small".into()));
        }
        if !(self.attack_fraction > 0.0 && self.attack_fraction < 1.0) {
            return Err(SafeError::Config(format!(
                "attack fraction {} outside (0, 1)",
                self.attack_fraction
            )));
        }
        Ok(())
    }
}

/// Column names: `inf_00..` for informative columns, `noise_00..` after.
pub fn column_names(cfg: &SyntheticConfig) -> Vec<String> {
    (0..cfg.n_informative)
        .map(|i| format!("inf_{i:02}"))
        .chain((0..cfg.n_noise).map(|i| format!("noise_{i:02}")))
        .collect()
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    Ok(generate_with_regimes(cfg)?.0)
}

/// Like [`generate`], also returning each row's source: 0 for normal rows,
/// 1 to 3 for the attack regime.
pub fn generate_with_regimes(cfg: &SyntheticConfig) -> Result<(Dataset, Vec<u8>)> {
    cfg.validate()?;
    let (n, p, f) = (cfg.n_rows, cfg.n_informative, cfg.n_factors);
    let mut shape_rng = rng::derive(cfg.seed, 0);
    let gauss = |r: &mut rng::SafeRng| r.sample::<f64, _>(StandardNormal);

    let loadings = Array2::from_shape_fn((p, f), |_| gauss(&mut shape_rng));
    // Each mean-shifted regime moves a third of the informative columns.
    let shift = |regime: u64, rng: &mut rng::SafeRng| -> Vec<f64> {
        (0..p)
            .map(|_| {
                if rng.random_bool(1.0 / 3.0) {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    sign * (2.5 + regime as f64)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let shift_a = shift(0, &mut shape_rng);
    let shift_b = shift(0, &mut shape_rng);
    let shift_c = shift(1, &mut shape_rng);

    let mut rng = rng::derive(cfg.seed, 1);
    let heavy = StudentT::new(3.0).expect("valid degrees of freedom");
    let mut values = Vec::with_capacity(n * cfg.n_features());
    let mut labels = Vec::with_capacity(n);
    let mut regimes = Vec::with_capacity(n);
    let mut factors = vec![0.0; f];
    for _ in 0..n {
        let attack = rng.random_bool(cfg.attack_fraction);
        let regime = rng.random_range(0..3u8);
        factors.iter_mut().for_each(|z| *z = gauss(&mut rng));
        for i in 0..p {
            let signal: f64 = (0..f).map(|j| loadings[[i, j]] * factors[j]).sum();
            let eps = gauss(&mut rng);
            let v = match (attack, regime) {
                (false, _) => signal + 0.3 * eps,
                (true, 0) => signal + 0.3 * eps + shift_a[i],
                (true, 1) => 2.5 * (signal + 0.3 * eps) + shift_b[i],
                (true, _) => 0.4 * signal + 0.3 * eps + shift_c[i],
            };
            values.push(v);
        }
        for _ in 0..cfg.n_noise {
            values.push(heavy.sample(&mut rng));
        }
        labels.push(u8::from(attack));
        regimes.push(if attack { regime + 1 } else { 0 });
    }
    let features = Array2::from_shape_vec((n, cfg.n_features()), values).expect("row-major fill");
    Ok((Dataset::new(features, labels, column_names(cfg))?, regimes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_balance() {
        let cfg = SyntheticConfig {
            n_rows: 2000,
            ..SyntheticConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.n_rows(), 2000);
        assert_eq!(ds.n_features(), 40);
        let attacks = ds.labels().iter().filter(|&&y| y == 1).count() as f64 / 2000.0;
        assert!((attacks - 0.3).abs() < 0.05);
        assert_eq!(ds.column_names()[24], "inf_24");
        assert_eq!(ds.column_names()[25], "noise_00");
    }

    #[test]
    fn seeded() {
        let cfg = SyntheticConfig {
            n_rows: 100,
            ..SyntheticConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }
}
