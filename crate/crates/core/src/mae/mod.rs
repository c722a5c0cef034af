//! Convolutional masked autoencoder.
//!
//! Training images have a fixed share of their pixels zeroed; the network
//! reconstructs the full image and is scored only on the zeroed pixels. After
//! training, the encoder half maps unmasked images to latent vectors.
//!
//! Architecture for a `g x g` input (g even), `d` latent units:
//!
//! ```text
//! encoder: conv 1->8 3x3 s1 p1, ReLU
//!          conv 8->16 3x3 s2 p1, ReLU        (16 x g/2 x g/2)
//!          dense 16*(g/2)^2 -> d             (latent, linear)
//! decoder: dense d -> 16*(g/2)^2, ReLU
//!          transposed conv 16->8 3x3 s2 p1 op1, ReLU
//!          conv 8->1 3x3 s1 p1               (linear output)
//! ```

pub mod layers;
mod model;
mod train;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SafeError};

pub use model::{Gradients, MaeModel, Tensor, PARAM_NAMES};
pub use train::{encode_set, train, TrainReport};

/// Which cells may be masked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskScope {
    /// Every cell of the grid.
    #[default]
    AllCells,
    /// Only the listed (row-major) cells, e.g. those carrying a feature.
    Cells { cells: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeConfig {
    pub grid_size: usize,
    pub latent_dim: usize,
    pub mask_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    #[serde(default)]
    pub mask_scope: MaskScope,
}

impl Default for MaeConfig {
    fn default() -> Self {
        MaeConfig {
            grid_size: 8,
            latent_dim: 16,
            mask_ratio: 0.75,
            epochs: 20,
            batch_size: 256,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            mask_scope: MaskScope::AllCells,
        }
    }
}

impl MaeConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SafeError::Config(m));
        if self.grid_size < 2 || !self.grid_size.is_multiple_of(2) {
            return fail(format!("grid size {} must be even and >= 2", self.grid_size));
        }
        if self.latent_dim == 0 {
            return fail("latent dimension must be >= 1".into());
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return fail(format!("mask ratio {} outside (0, 1)", self.mask_ratio));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.adam_epsilon > 0.0) {
            return fail("learning rate and epsilon must be positive".into());
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return fail("Adam betas must lie in [0, 1)".into());
        }
        if let MaskScope::Cells { cells } = &self.mask_scope {
            let n = self.grid_size * self.grid_size;
            if cells.is_empty() || cells.iter().any(|&c| c >= n) {
                return fail("mask cells must be a non-empty set of grid cells".into());
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.grid_size * self.grid_size
    }

    /// Candidate cells for masking.
    pub fn mask_candidates(&self) -> Vec<usize> {
        match &self.mask_scope {
            MaskScope::AllCells => (0..self.n_cells()).collect(),
            MaskScope::Cells { cells } => cells.clone(),
        }
    }
}

/// Number of masked cells among `candidates`: `ceil(ratio * candidates)`.
pub fn masked_count(candidates: usize, ratio: f64) -> usize {
    // the epsilon keeps products like 0.75 * 64 from rounding up past 48
    ((ratio * candidates as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Binary mask over `n_cells` with exactly `masked_count(candidates, ratio)`
/// ones, drawn uniformly without replacement from `candidates`.
pub fn make_mask<R: Rng + ?Sized>(n_cells: usize, candidates: &[usize], ratio: f64, rng: &mut R) -> Vec<u8> {
    let mut mask = vec![0u8; n_cells];
    let m = masked_count(candidates.len(), ratio).min(candidates.len());
    for i in index::sample(rng, candidates.len(), m) {
        mask[candidates[i]] = 1;
    }
    mask
}

/// Images in [0, 1] together with their masks and the zero-filled inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub n_cells: usize,
    pub originals: Vec<f64>,
    pub masks: Vec<u8>,
    pub masked_inputs: Vec<f64>,
}

impl MaskedBatch {
    pub fn new(n_cells: usize, originals: Vec<f64>, masks: Vec<u8>) -> Result<Self> {
        if originals.len() != masks.len() || !originals.len().is_multiple_of(n_cells) {
            return Err(SafeError::InvalidArgument("batch images and masks disagree in shape".into()));
        }
        let masked_inputs = originals
            .iter()
            .zip(&masks)
            .map(|(&x, &m)| if m == 1 { 0.0 } else { x })
            .collect();
        Ok(MaskedBatch {
            n_cells,
            originals,
            masks,
            masked_inputs,
        })
    }

    pub fn len(&self) -> usize {
        self.originals.len() / self.n_cells
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn sample(&self, i: usize) -> (&[f64], &[f64], &[u8]) {
        let r = i * self.n_cells..(i + 1) * self.n_cells;
        (&self.masked_inputs[r.clone()], &self.originals[r.clone()], &self.masks[r])
    }
}

/// Mean squared error over the masked cells only.
pub fn masked_mse(recon: &[f64], original: &[f64], mask: &[u8]) -> Result<f64> {
    if recon.len() != original.len() || recon.len() != mask.len() {
        return Err(SafeError::InvalidArgument("masked_mse shape mismatch".into()));
    }
    let count = mask.iter().filter(|&&m| m == 1).count();
    if count == 0 {
        return Err(SafeError::InvalidArgument("masked_mse with an empty mask".into()));
    }
    let sum: f64 = recon
        .iter()
        .zip(original)
        .zip(mask)
        .filter(|(_, &m)| m == 1)
        .map(|((r, o), _)| (r - o) * (r - o))
        .sum();
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_counts() {
        let mut rng = crate::rng::seeded(0);
        let all: Vec<usize> = (0..64).collect();
        let m = make_mask(64, &all, 0.75, &mut rng);
        assert_eq!(m.iter().filter(|&&v| v == 1).count(), 48);
        let m = make_mask(64, &all, 0.01, &mut rng);
        assert_eq!(m.iter().filter(|&&v| v == 1).count(), 1);
        let some = [3, 9, 10, 40];
        let m = make_mask(64, &some, 0.75, &mut rng);
        assert_eq!(m.iter().filter(|&&v| v == 1).count(), 3);
        assert!(m.iter().enumerate().all(|(i, &v)| v == 0 || some.contains(&i)));
    }

    #[test]
    fn masked_count_is_a_ceiling() {
        assert_eq!(masked_count(64, 0.75), 48);
        assert_eq!(masked_count(64, 0.751), 49);
        assert_eq!(masked_count(16, 0.75), 12);
        assert_eq!(masked_count(31, 0.75), 24);
    }

    #[test]
    fn masked_mse_examples() {
        let orig = [0.1, 0.2, 0.3, 0.4];
        let mask = [1, 0, 1, 0];
        assert_eq!(masked_mse(&orig, &orig, &mask).unwrap(), 0.0);
        let plus: Vec<f64> = orig.iter().map(|v| v + 1.0).collect();
        assert!((masked_mse(&plus, &orig, &mask).unwrap() - 1.0).abs() < 1e-15);
        let mut poked = orig;
        poked[1] = 99.0;
        assert_eq!(masked_mse(&poked, &orig, &mask).unwrap(), 0.0);
        assert!(masked_mse(&orig, &orig, &[0, 0, 0, 0]).is_err());
        assert!(masked_mse(&orig, &orig[..3], &mask).is_err());
    }

    #[test]
    fn batch_zero_fills_masked_cells() {
        let b = MaskedBatch::new(2, vec![0.5, 0.7, 0.2, 0.9], vec![1, 0, 0, 1]).unwrap();
        assert_eq!(b.masked_inputs, vec![0.0, 0.7, 0.2, 0.0]);
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(MaeConfig::default().validate().is_ok());
        let odd = MaeConfig {
            grid_size: 7,
            ..MaeConfig::default()
        };
        assert!(odd.validate().is_err());
        let ratio = MaeConfig {
            mask_ratio: 1.0,
            ..MaeConfig::default()
        };
        assert!(ratio.validate().is_err());
    }
}
