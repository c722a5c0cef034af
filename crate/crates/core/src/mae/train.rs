use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{make_mask, MaeModel, MaskedBatch};
use crate::error::{Result, SafeError};
use crate::image_map::ImageSet;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean masked loss over each epoch's batches (pre-step values).
    pub epoch_loss: Vec<f64>,
    pub steps: u64,
}

fn to_unit(pixels: &[u8]) -> impl Iterator<Item = f64> + '_ {
    pixels.iter().map(|&p| f64::from(p) / 255.0)
}

/// Trains on normal images for `model.config.epochs` epochs.
///
/// Each epoch shuffles the images and draws a fresh mask for every image;
/// both come from one stream seeded by the config seed.
pub fn train(model: &mut MaeModel, images: &ImageSet) -> Result<TrainReport> {
    let cfg = model.config.clone();
    if images.is_empty() {
        return Err(SafeError::Data("no training images".into()));
    }
    if images.grid_size != cfg.grid_size {
        return Err(SafeError::InvalidArgument(format!(
            "images are {}x{} but the model expects {}x{}",
            images.grid_size, images.grid_size, cfg.grid_size, cfg.grid_size
        )));
    }
    if images.labels.iter().any(|&y| y != 0) {
        return Err(SafeError::Data("training images must all be normal (label 0)".into()));
    }
    let cells = cfg.n_cells();
    let candidates = cfg.mask_candidates();
    let mut stream = rng::derive(cfg.seed, 0x7121);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut stream);
        let mut weighted = 0.0;
        for batch_ids in order.chunks(cfg.batch_size) {
            let mut originals = Vec::with_capacity(batch_ids.len() * cells);
            let mut masks = Vec::with_capacity(batch_ids.len() * cells);
            for &i in batch_ids {
                originals.extend(to_unit(images.image(i)));
                masks.extend(make_mask(cells, &candidates, cfg.mask_ratio, &mut stream));
            }
            let batch = MaskedBatch::new(cells, originals, masks)?;
            let loss = model.backward_and_step(&batch)?;
            weighted += loss * batch_ids.len() as f64;
        }
        epoch_loss.push(weighted / images.len() as f64);
    }
    Ok(TrainReport {
        epoch_loss,
        steps: model.step,
    })
}

/// Latent vectors of every image (unmasked), one row per image, in order.
pub fn encode_set(model: &MaeModel, images: &ImageSet) -> Result<Array2<f64>> {
    if images.grid_size != model.config.grid_size {
        return Err(SafeError::InvalidArgument("image grid does not match the model".into()));
    }
    let d = model.latent_dim();
    let rows: Vec<Vec<f64>> = (0..images.len())
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = to_unit(images.image(i)).collect();
            model.encode(&x)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((images.len(), d), flat).expect("rows have latent_dim entries"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mae::MaeConfig;

    fn constant_images(n: usize, grid: usize, value: u8) -> ImageSet {
        ImageSet {
            grid_size: grid,
            pixels: vec![value; n * grid * grid],
            labels: vec![0; n],
            row_ids: (0..n).collect(),
        }
    }

    #[test]
    fn rejects_empty_and_attack_images() {
        let mut m = MaeModel::new(MaeConfig::default()).unwrap();
        assert!(train(&mut m, &constant_images(0, 8, 0)).is_err());
        let mut bad = constant_images(3, 8, 10);
        bad.labels[1] = 1;
        assert!(train(&mut m, &bad).is_err());
        assert!(train(&mut m, &constant_images(3, 4, 10)).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = MaeConfig {
            grid_size: 4,
            latent_dim: 4,
            epochs: 2,
            batch_size: 8,
            seed: 3,
            ..MaeConfig::default()
        };
        let mut rng = rng::seeded(1);
        use rand::Rng;
        let images = ImageSet {
            grid_size: 4,
            pixels: (0..40 * 16).map(|_| rng.random::<u8>()).collect(),
            labels: vec![0; 40],
            row_ids: (0..40).collect(),
        };
        let mut a = MaeModel::new(cfg.clone()).unwrap();
        let mut b = MaeModel::new(cfg).unwrap();
        let ra = train(&mut a, &images).unwrap();
        let rb = train(&mut b, &images).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.epoch_loss.len(), 2);
        assert_eq!(ra.steps, 10);
    }

    #[test]
    fn encode_set_matches_single_encodes_in_order() {
        let m = MaeModel::new(MaeConfig::default()).unwrap();
        let mut images = constant_images(3, 8, 0);
        for (i, p) in images.pixels.iter_mut().enumerate() {
            *p = (i * 37 % 251) as u8;
        }
        let z = encode_set(&m, &images).unwrap();
        assert_eq!(z.dim(), (3, 16));
        for i in 0..3 {
            let x: Vec<f64> = to_unit(images.image(i)).collect();
            assert_eq!(z.row(i).to_vec(), m.encode(&x).unwrap());
            // encoding is the latent half of an unmasked forward pass
            assert_eq!(z.row(i).to_vec(), m.forward(&x).unwrap().1);
        }
    }
}
