//! Isolation Forest.

use ndarray::{Array2, ArrayView1};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SafeError};
use crate::rng::{self, SafeRng};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful BST search over `n` points; the
/// expected remaining depth below a leaf that still holds `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoTree {
    pub nodes: Vec<Node>,
}

impl IsoTree {
    fn build(data: &Array2<f64>, rows: Vec<usize>, height_limit: usize, rng: &mut SafeRng) -> Self {
        let mut tree = IsoTree { nodes: Vec::new() };
        tree.grow(data, rows, 0, height_limit, rng);
        tree
    }

    fn grow(&mut self, data: &Array2<f64>, rows: Vec<usize>, depth: usize, limit: usize, rng: &mut SafeRng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: rows.len() });
        if rows.len() <= 1 || depth >= limit {
            return id;
        }
        let ranges: Vec<(usize, f64, f64)> = (0..data.ncols())
            .filter_map(|f| {
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    let v = data[[r, f]];
                    (lo.min(v), hi.max(v))
                });
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let value = rng.random_range(lo..hi);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| data[[r, feature]] < value);
        let left = self.grow(data, left_rows, depth + 1, limit, rng);
        let right = self.grow(data, right_rows, depth + 1, limit, rng);
        self.nodes[id] = Node::Split {
            feature,
            value,
            left,
            right,
        };
        id
    }

    /// Depth at which `x` lands plus the expected depth left in its leaf.
    pub fn path_length(&self, x: ArrayView1<f64>) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                Node::Leaf { size } => return depth + average_path_length(size),
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    node = if x[feature] < value { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }

    pub fn height(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoForestModel {
    pub trees: Vec<IsoTree>,
    /// Points drawn (without replacement) for each tree.
    pub subsample: usize,
    pub dim: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl IsoForestModel {
    pub const DEFAULT_TREES: usize = 100;
    pub const DEFAULT_SUBSAMPLE: usize = 256;

    pub fn fit(data: &Array2<f64>, n_trees: usize, subsample: usize, seed: u64) -> Result<Self> {
        let m = data.nrows();
        if m == 0 || n_trees == 0 || subsample == 0 {
            return Err(SafeError::InvalidArgument("isolation forest needs data, trees and a subsample".into()));
        }
        let psi = subsample.min(m);
        let height_limit = (psi as f64).log2().ceil() as usize;
        let trees = (0..n_trees)
            .map(|t| {
                let mut rng = rng::derive(seed, t as u64);
                let rows = index::sample(&mut rng, m, psi).into_vec();
                IsoTree::build(data, rows, height_limit, &mut rng)
            })
            .collect();
        Ok(IsoForestModel {
            trees,
            subsample: psi,
            dim: data.ncols(),
            seed,
            threshold: 0.5,
        })
    }

    pub fn mean_path_length(&self, x: ArrayView1<f64>) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// `2^(-E[h(x)] / c(psi))`; 0.5 when the normalizer is zero (psi = 1).
    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        let c = average_path_length(self.subsample);
        if c == 0.0 {
            return 0.5;
        }
        2f64.powf(-self.mean_path_length(x) / c)
    }
}
