//! Exact t-SNE into two dimensions.
//!
//! All pairwise terms are computed directly; the inputs here are feature
//! vectors (at most a few dozen points), so the O(k^2) cost is negligible.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SafeError};
use crate::rng;

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 50;
const P_FLOOR: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and the low momentum.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl TsneConfig {
    /// Standard settings; perplexity defaults to `min(30, floor((k - 1) / 3))`.
    pub fn for_points(k: usize, seed: u64) -> Self {
        TsneConfig {
            perplexity: default_perplexity(k),
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed,
        }
    }
}

pub fn default_perplexity(k: usize) -> f64 {
    (k.saturating_sub(1) / 3).clamp(1, 30) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// One 2-D point per input row.
    pub coords: Array2<f64>,
    /// KL(P || Q) after each iteration, measured against the un-exaggerated P.
    pub kl_history: Vec<f64>,
}

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let k = x.nrows();
    let mut d = Array2::zeros((k, k));
    for i in 0..k {
        for j in (i + 1)..k {
            let a: ArrayView1<f64> = x.row(i);
            let b = x.row(j);
            let s: f64 = a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
            d[[i, j]] = s;
            d[[j, i]] = s;
        }
    }
    d
}

/// Conditional affinities `p_{j|i}` with the Gaussian precision of each row
/// bisected until the row entropy matches `ln(perplexity)`.
pub fn conditional_affinities(dist: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let k = dist.nrows();
    let target = perplexity.ln();
    let mut p = Array2::zeros((k, k));
    let mut row = vec![0.0; k];
    for i in 0..k {
        // shifting by the nearest distance leaves p and H unchanged but keeps
        // exp() away from underflow
        let shift = (0..k)
            .filter(|&j| j != i)
            .map(|j| dist[[i, j]])
            .fold(f64::INFINITY, f64::min);
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        let scale = (0..k)
            .filter(|&j| j != i)
            .map(|j| dist[[i, j]] - shift)
            .fold(0.0, f64::max);
        if scale > 0.0 {
            beta = 1.0 / scale;
        }
        for _ in 0..MAX_BISECTIONS {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..k {
                row[j] = if j == i { 0.0 } else { (-(dist[[i, j]] - shift) * beta).exp() };
                sum += row[j];
                weighted += (dist[[i, j]] - shift) * row[j];
            }
            let entropy = sum.ln() + beta * weighted / sum;
            let diff = entropy - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        let sum: f64 = row.iter().sum();
        for j in 0..k {
            p[[i, j]] = row[j] / sum;
        }
    }
    p
}

/// Symmetrized joint affinities `(p_{j|i} + p_{i|j}) / 2k`, floored.
pub fn joint_affinities(x: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let k = x.nrows();
    let cond = conditional_affinities(&squared_distances(x), perplexity);
    let mut p = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            if i != j {
                p[[i, j]] = ((cond[[i, j]] + cond[[j, i]]) / (2.0 * k as f64)).max(P_FLOOR);
            }
        }
    }
    p
}

fn kl_divergence(p: &Array2<f64>, num: &Array2<f64>, z: f64) -> f64 {
    let k = p.nrows();
    let mut kl = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let q = (num[[i, j]] / z).max(P_FLOOR);
                kl += p[[i, j]] * (p[[i, j]] / q).ln();
            }
        }
    }
    kl
}

/// Embeds the rows of `x` (one row per point) into the plane.
pub fn tsne_embed(x: &Array2<f64>, cfg: &TsneConfig) -> Result<Embedding> {
    let (k, n) = x.dim();
    if k < 4 || n < 2 {
        return Err(SafeError::InvalidArgument(format!("t-SNE needs at least 4 points of dimension >= 2, got {k}x{n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SafeError::InvalidArgument("t-SNE input has non-finite entries".into()));
    }
    if !(cfg.perplexity > 0.0 && cfg.perplexity < k as f64) {
        return Err(SafeError::InvalidArgument(format!(
            "perplexity {} must be in (0, {k})",
            cfg.perplexity
        )));
    }

    let p = joint_affinities(x, cfg.perplexity);
    let mut rng = rng::seeded(cfg.seed);
    let mut y = Array2::from_shape_fn((k, 2), |_| 1e-4 * rng.sample::<f64, _>(StandardNormal));
    let mut velocity = Array2::<f64>::zeros((k, 2));
    let mut gains = Array2::<f64>::ones((k, 2));
    let mut num = Array2::<f64>::zeros((k, k));
    let mut grad = Array2::<f64>::zeros((k, 2));
    let mut kl_history = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let exaggerating = iter < cfg.exaggeration_iters;
        let exaggeration = if exaggerating { cfg.early_exaggeration } else { 1.0 };
        let momentum = if exaggerating { cfg.initial_momentum } else { cfg.final_momentum };

        let mut z = 0.0;
        for i in 0..k {
            for j in (i + 1)..k {
                let dx = y[[i, 0]] - y[[j, 0]];
                let dy = y[[i, 1]] - y[[j, 1]];
                let w = 1.0 / (1.0 + dx * dx + dy * dy);
                num[[i, j]] = w;
                num[[j, i]] = w;
                z += 2.0 * w;
            }
        }
        grad.fill(0.0);
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                let q = (num[[i, j]] / z).max(P_FLOOR);
                let coeff = 4.0 * (exaggeration * p[[i, j]] - q) * num[[i, j]];
                grad[[i, 0]] += coeff * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += coeff * (y[[i, 1]] - y[[j, 1]]);
            }
        }
        for ((g, v), gain) in grad.iter().zip(velocity.iter()).zip(gains.iter_mut()) {
            // grow the gain while the gradient keeps pushing against the
            // current direction of travel
            *gain = if (*g > 0.0) != (*v > 0.0) { *gain + 0.2 } else { (*gain * 0.8).max(MIN_GAIN) };
        }
        for ((v, g), gain) in velocity.iter_mut().zip(grad.iter()).zip(gains.iter()) {
            *v = momentum * *v - cfg.learning_rate * gain * g;
        }
        y += &velocity;
        let mean = y.mean_axis(ndarray::Axis(0)).expect("k >= 4");
        y -= &mean.insert_axis(ndarray::Axis(0));

        // KL of the updated embedding
        let mut z = 0.0;
        for i in 0..k {
            for j in (i + 1)..k {
                let dx = y[[i, 0]] - y[[j, 0]];
                let dy = y[[i, 1]] - y[[j, 1]];
                let w = 1.0 / (1.0 + dx * dx + dy * dy);
                num[[i, j]] = w;
                num[[j, i]] = w;
                z += 2.0 * w;
            }
        }
        let kl = kl_divergence(&p, &num, z);
        if !kl.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(SafeError::Numerical(format!("t-SNE diverged at iteration {iter}")));
        }
        kl_history.push(kl);
    }
    Ok(Embedding { coords: y, kl_history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs_input() -> Array2<f64> {
        let mut rng = rng::seeded(3);
        let a: Vec<f64> = (0..30).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..30).map(|_| rng.random::<f64>() + 2.0).collect();
        Array2::from_shape_fn((4, 30), |(i, j)| if i < 2 { a[j] } else { b[j] })
    }

    #[test]
    fn conditional_rows_hit_the_perplexity() {
        let mut rng = rng::seeded(1);
        let x = Array2::from_shape_fn((12, 5), |_| rng.random::<f64>());
        let cond = conditional_affinities(&squared_distances(&x), 4.0);
        for row in cond.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            let h: f64 = row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
            assert!((h - 4f64.ln()).abs() < 1e-4, "entropy {h}");
        }
    }

    #[test]
    fn duplicate_rows_coembed() {
        let x = pairs_input();
        let cfg = TsneConfig::for_points(4, 5);
        let emb = tsne_embed(&x, &cfg).unwrap();
        let dist = |i: usize, j: usize| {
            let d = &emb.coords.row(i) - &emb.coords.row(j);
            d.dot(&d).sqrt()
        };
        let mut cross = [dist(0, 2), dist(0, 3), dist(1, 2), dist(1, 3)];
        cross.sort_by(f64::total_cmp);
        let median = (cross[1] + cross[2]) / 2.0;
        assert!(dist(0, 1) < 0.1 * median, "pair {} vs cross {median}", dist(0, 1));
        assert!(dist(2, 3) < 0.1 * median, "pair {} vs cross {median}", dist(2, 3));
    }

    #[test]
    fn kl_after_exaggeration_does_not_increase() {
        let mut rng = rng::seeded(9);
        let x = Array2::from_shape_fn((20, 40), |_| rng.random::<f64>());
        let emb = tsne_embed(&x, &TsneConfig::for_points(20, 1)).unwrap();
        assert_eq!(emb.kl_history.len(), 1000);
        assert!(emb.kl_history[999] <= emb.kl_history[299] + 1e-6);
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let x = pairs_input();
        let cfg = TsneConfig::for_points(4, 42);
        let a = tsne_embed(&x, &cfg).unwrap();
        let b = tsne_embed(&x, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = pairs_input();
        let mut cfg = TsneConfig::for_points(4, 0);
        cfg.perplexity = 4.0;
        assert!(tsne_embed(&x, &cfg).is_err());
        let mut bad = x.clone();
        bad[[0, 0]] = f64::NAN;
        assert!(tsne_embed(&bad, &TsneConfig::for_points(4, 0)).is_err());
        assert!(tsne_embed(&Array2::zeros((3, 5)), &TsneConfig::for_points(3, 0)).is_err());
    }

    #[test]
    fn default_perplexity_rule() {
        assert_eq!(default_perplexity(4), 1.0);
        assert_eq!(default_perplexity(25), 8.0);
        assert_eq!(default_perplexity(31), 10.0);
        assert_eq!(default_perplexity(200), 30.0);
    }
}
