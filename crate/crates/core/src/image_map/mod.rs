//! Tabular-to-image mapping.
//!
//! Each selected feature gets its own cell on a `grid x grid` canvas. The
//! placement is learned once from normal training data: features are embedded
//! in the plane with t-SNE (each feature is a point whose coordinates are its
//! values across samples), the embedding is rotated so its minimum-area
//! bounding rectangle is axis aligned and stretched onto the grid, and an
//! optimal assignment settles features that land on the same cell. A flow is
//! then drawn by writing `round(255 * value)` into each feature's cell.

pub mod assignment;
pub mod geometry;
pub mod tsne;

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SafeError};
use crate::ingest::{self, Dataset, Normalizer};
use crate::rng;
use geometry::Point;
pub use tsne::{tsne_embed, Embedding, TsneConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub grid_size: usize,
    /// `None` picks `min(30, floor((k - 1) / 3))`.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    /// Samples used as the feature vectors' coordinates; larger inputs are
    /// subsampled with the layout seed.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            grid_size: 8,
            perplexity: None,
            iterations: 1000,
            max_samples: 5000,
            seed: 0,
        }
    }
}

/// Continuous grid positions `(row, col)` of each feature before
/// discretization, plus their nearest cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTargets {
    pub grid_size: usize,
    pub positions: Vec<Point>,
    pub cells: Vec<(usize, usize)>,
    /// Set when the embedding was collinear and plain bounding-box framing
    /// was used instead of the minimum-area rectangle.
    pub degenerate: bool,
}

/// Rotates the embedding onto its minimum-area rectangle, scales that
/// rectangle onto `[0, grid - 1]^2` and rounds to cells.
pub fn frame_and_rasterize(coords: &Array2<f64>, grid_size: usize) -> Result<CellTargets> {
    let k = coords.nrows();
    if grid_size < 2 {
        return Err(SafeError::InvalidArgument(format!("grid size {grid_size} must be at least 2")));
    }
    if grid_size * grid_size < k {
        return Err(SafeError::InvalidArgument(format!(
            "{k} features do not fit on a {grid_size}x{grid_size} grid"
        )));
    }
    if coords.ncols() != 2 {
        return Err(SafeError::InvalidArgument("embedding must be two dimensional".into()));
    }
    let points: Vec<Point> = coords.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    let hull = geometry::convex_hull(&points);
    let rotation = geometry::min_area_rotation(&points, &hull);
    let rotated: Vec<Point> = match rotation {
        Some(angle) if angle != 0.0 => points.iter().map(|&p| geometry::rotate(p, angle)).collect(),
        _ => points.clone(),
    };
    let (lo, hi) = geometry::bounds(rotated.iter().copied());
    let last = (grid_size - 1) as f64;
    let scale = |v: f64, axis: usize| {
        let span = hi[axis] - lo[axis];
        if span > 0.0 {
            (v - lo[axis]) / span * last
        } else {
            last / 2.0
        }
    };
    let positions: Vec<Point> = rotated.iter().map(|p| [scale(p[1], 1), scale(p[0], 0)]).collect();
    let cells = positions
        .iter()
        .map(|p| (p[0].round() as usize, p[1].round() as usize))
        .collect();
    Ok(CellTargets {
        grid_size,
        positions,
        cells,
        degenerate: rotation.is_none(),
    })
}

/// Assigns every feature a distinct cell, minimizing the summed squared
/// distance between features' continuous positions and their cells.
pub fn resolve_collisions(targets: &CellTargets) -> Result<Vec<(usize, usize)>> {
    let g = targets.grid_size;
    let k = targets.positions.len();
    if g * g < k {
        return Err(SafeError::InvalidArgument(format!("{k} features do not fit on a {g}x{g} grid")));
    }
    let mut costs = Vec::with_capacity(k * g * g);
    for p in &targets.positions {
        for r in 0..g {
            for c in 0..g {
                costs.push((p[0] - r as f64).powi(2) + (p[1] - c as f64).powi(2));
            }
        }
    }
    let (assignment, _) = assignment::linear_sum_assignment(&costs, k, g * g);
    Ok(assignment
        .into_iter()
        .map(|cell| {
            let cell = cell.expect("every feature is assigned when k <= cells");
            (cell / g, cell % g)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutFeature {
    pub name: String,
    pub row: usize,
    pub col: usize,
    /// Normalizer range of the feature, recorded for reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

/// A fitted feature-to-cell bijection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelLayout {
    pub grid_size: usize,
    pub features: Vec<LayoutFeature>,
    #[serde(default)]
    pub degenerate_framing: bool,
}

impl PixelLayout {
    pub fn new(grid_size: usize, names: Vec<String>, cells: Vec<(usize, usize)>) -> Result<Self> {
        if names.len() != cells.len() {
            return Err(SafeError::InvalidArgument("one cell per feature required".into()));
        }
        let layout = PixelLayout {
            grid_size,
            features: names
                .into_iter()
                .zip(cells)
                .map(|(name, (row, col))| LayoutFeature {
                    name,
                    row,
                    col,
                    min: None,
                    max: None,
                })
                .collect(),
            degenerate_framing: false,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.grid_size;
        let mut seen = HashSet::new();
        for f in &self.features {
            if f.row >= g || f.col >= g {
                return Err(SafeError::Data(format!("feature `{}` placed outside the {g}x{g} grid", f.name)));
            }
            if !seen.insert((f.row, f.col)) {
                return Err(SafeError::Data(format!("cell ({}, {}) used twice", f.row, f.col)));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.features.len()
    }

    pub fn n_cells(&self) -> usize {
        self.grid_size * self.grid_size
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Row-major cell index of feature `i`.
    pub fn cell_index(&self, i: usize) -> usize {
        let f = &self.features[i];
        f.row * self.grid_size + f.col
    }

    pub fn occupied(&self) -> Vec<usize> {
        (0..self.k()).map(|i| self.cell_index(i)).collect()
    }

    /// Records each feature's normalizer range next to its cell.
    pub fn attach_scalers(&mut self, normalizer: &Normalizer) {
        for f in &mut self.features {
            if let Some(c) = normalizer.columns.iter().find(|c| c.name == f.name) {
                f.min = Some(c.min);
                f.max = Some(c.max);
            }
        }
    }

    /// Draws one normalized feature vector. Values are clipped to [0, 1]
    /// and quantized with `floor(255 * x + 0.5)`.
    pub fn render_into(&self, x: ArrayView1<f64>, pixels: &mut [u8]) -> Result<()> {
        if x.len() != self.k() {
            return Err(SafeError::InvalidArgument(format!(
                "vector of length {} for a layout of {} features",
                x.len(),
                self.k()
            )));
        }
        pixels.fill(0);
        for (i, &v) in x.iter().enumerate() {
            pixels[self.cell_index(i)] = quantize(v);
        }
        Ok(())
    }

    pub fn transform_sample(&self, x: ArrayView1<f64>, label: u8) -> Result<ImageSample> {
        let mut pixels = vec![0u8; self.n_cells()];
        self.render_into(x, &mut pixels)?;
        Ok(ImageSample {
            grid_size: self.grid_size,
            pixels,
            label,
        })
    }

    /// Reads the feature values back out of an image (up to quantization).
    pub fn inverse(&self, pixels: &[u8]) -> Vec<f64> {
        (0..self.k())
            .map(|i| f64::from(pixels[self.cell_index(i)]) / 255.0)
            .collect()
    }

    /// Renders every row of a normalized dataset; columns are picked by the
    /// layout's feature names.
    pub fn transform_dataset(&self, ds: &Dataset) -> Result<ImageSet> {
        let selected = ds.select_named(&self.names())?;
        let cells = self.n_cells();
        let mut pixels = vec![0u8; selected.n_rows() * cells];
        for (row, chunk) in selected.features().rows().into_iter().zip(pixels.chunks_mut(cells)) {
            self.render_into(row, chunk)?;
        }
        Ok(ImageSet {
            grid_size: self.grid_size,
            pixels,
            labels: selected.labels().to_vec(),
            row_ids: selected.row_ids().to_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        ingest::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let layout: PixelLayout = ingest::read_json(path)?;
        layout.validate()?;
        Ok(layout)
    }
}

pub fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0) + 0.5).floor() as u8
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSample {
    pub grid_size: usize,
    /// Row-major intensities; cells with no feature are 0.
    pub pixels: Vec<u8>,
    pub label: u8,
}

/// Everything produced while fitting a layout.
#[derive(Debug, Clone)]
pub struct LayoutFit {
    pub layout: PixelLayout,
    pub embedding: Embedding,
    pub targets: CellTargets,
}

/// Fits the layout on normalized normal-train rows restricted to the
/// selected features.
pub fn fit_layout(train_normal: &Dataset, cfg: &LayoutConfig) -> Result<LayoutFit> {
    let k = train_normal.n_features();
    let n = train_normal.n_rows();
    if n == 0 {
        return Err(SafeError::Data("layout fit on zero rows".into()));
    }
    let x = train_normal.features();
    let feature_vectors = if n > cfg.max_samples {
        let mut picked = index::sample(&mut rng::derive(cfg.seed, 1), n, cfg.max_samples).into_vec();
        picked.sort_unstable();
        x.select(Axis(0), &picked).reversed_axes()
    } else {
        x.t().to_owned()
    };
    let mut tsne_cfg = TsneConfig::for_points(k, cfg.seed);
    tsne_cfg.iterations = cfg.iterations;
    if let Some(p) = cfg.perplexity {
        tsne_cfg.perplexity = p;
    }
    let embedding = tsne_embed(&feature_vectors, &tsne_cfg)?;
    let targets = frame_and_rasterize(&embedding.coords, cfg.grid_size)?;
    let cells = resolve_collisions(&targets)?;
    let mut layout = PixelLayout::new(cfg.grid_size, train_normal.column_names().to_vec(), cells)?;
    layout.degenerate_framing = targets.degenerate;
    Ok(LayoutFit {
        layout,
        embedding,
        targets,
    })
}

/// A batch of rendered flows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub grid_size: usize,
    /// `n * grid * grid` bytes, one row-major image after another.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
    /// Source row of each image; `0..n` for sets read from disk.
    pub row_ids: Vec<usize>,
}

const IMAGE_MAGIC: &[u8; 8] = b"SAFEIMG1";

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let cells = self.grid_size * self.grid_size;
        &self.pixels[i * cells..(i + 1) * cells]
    }

    pub fn subset(&self, rows: &[usize]) -> ImageSet {
        let mut pixels = Vec::with_capacity(rows.len() * self.grid_size * self.grid_size);
        for &i in rows {
            pixels.extend_from_slice(self.image(i));
        }
        ImageSet {
            grid_size: self.grid_size,
            pixels,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            row_ids: rows.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    /// Layout: magic `SAFEIMG1`, grid size (u32 LE), count (u64 LE), then per
    /// image one label byte followed by `grid * grid` pixel bytes.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(IMAGE_MAGIC)?;
        w.write_all(&(self.grid_size as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for i in 0..self.len() {
            w.write_all(&[self.labels[i]])?;
            w.write_all(self.image(i))?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |what: &str| SafeError::Data(format!("malformed image file: {what}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != IMAGE_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let grid_size = u32::from_le_bytes(b4) as usize;
        let n = u64::from_le_bytes(b8) as usize;
        let cells = grid_size * grid_size;
        let mut labels = Vec::with_capacity(n);
        let mut pixels = vec![0u8; n * cells];
        for i in 0..n {
            let mut label = [0u8; 1];
            r.read_exact(&mut label).map_err(|_| bad("truncated body"))?;
            if label[0] > 1 {
                return Err(bad("label byte not 0/1"));
            }
            labels.push(label[0]);
            r.read_exact(&mut pixels[i * cells..(i + 1) * cells])
                .map_err(|_| bad("truncated body"))?;
        }
        Ok(ImageSet {
            grid_size,
            pixels,
            labels,
            row_ids: (0..n).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| SafeError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| SafeError::io(path, e))?;
        w.flush().map_err(|e| SafeError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| SafeError::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn axis_aligned_square_maps_corners_to_corners() {
        let coords = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.3, 0.6]];
        let t = frame_and_rasterize(&coords, 8).unwrap();
        assert_eq!(&t.cells[..4], &[(0, 0), (0, 7), (7, 0), (7, 7)]);
        assert!(!t.degenerate);
    }

    #[test]
    fn collinear_embedding_falls_back_to_bounding_box() {
        let coords = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let t = frame_and_rasterize(&coords, 4).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.cells, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn grid_too_small_is_rejected() {
        let coords = Array2::zeros((5, 2));
        assert!(frame_and_rasterize(&coords, 2).is_err());
        assert!(frame_and_rasterize(&coords, 1).is_err());
    }

    #[test]
    fn no_collisions_keeps_rounding() {
        let targets = CellTargets {
            grid_size: 3,
            positions: vec![[0.1, 0.2], [1.9, 0.1], [1.2, 1.8]],
            cells: vec![(0, 0), (2, 0), (1, 2)],
            degenerate: false,
        };
        assert_eq!(resolve_collisions(&targets).unwrap(), targets.cells);
    }

    #[test]
    fn collision_moves_the_farther_feature() {
        let targets = CellTargets {
            grid_size: 2,
            positions: vec![[0.1, 0.0], [0.4, 0.0], [1.0, 1.0], [0.0, 1.0]],
            cells: vec![(0, 0), (0, 0), (1, 1), (0, 1)],
            degenerate: false,
        };
        let cells = resolve_collisions(&targets).unwrap();
        assert_eq!(cells, vec![(0, 0), (1, 0), (1, 1), (0, 1)]);
    }

    #[test]
    fn full_grid_is_a_bijection() {
        let mut rng = rng::seeded(4);
        use rand::Rng;
        let targets = CellTargets {
            grid_size: 8,
            positions: (0..64).map(|_| [rng.random::<f64>() * 7.0, rng.random::<f64>() * 7.0]).collect(),
            cells: vec![],
            degenerate: false,
        };
        let cells = resolve_collisions(&targets).unwrap();
        let unique: HashSet<_> = cells.iter().collect();
        assert_eq!(unique.len(), 64);
    }

    fn two_feature_layout() -> PixelLayout {
        PixelLayout::new(4, vec!["a".into(), "b".into()], vec![(0, 1), (3, 2)]).unwrap()
    }

    #[test]
    fn transform_examples() {
        let layout = two_feature_layout();
        let zero = layout.transform_sample(array![0.0, 0.0].view(), 0).unwrap();
        assert!(zero.pixels.iter().all(|&p| p == 0));
        let img = layout.transform_sample(array![1.0, 0.5].view(), 1).unwrap();
        assert_eq!(img.pixels[1], 255);
        assert_eq!(img.pixels[3 * 4 + 2], 128);
        assert_eq!(img.pixels.iter().filter(|&&p| p != 0).count(), 2);
        assert!(layout.transform_sample(array![0.1].view(), 0).is_err());
    }

    #[test]
    fn layout_rejects_shared_cells() {
        assert!(PixelLayout::new(4, vec!["a".into(), "b".into()], vec![(0, 1), (0, 1)]).is_err());
        assert!(PixelLayout::new(4, vec!["a".into()], vec![(4, 0)]).is_err());
    }

    #[test]
    fn image_file_round_trip() {
        let set = ImageSet {
            grid_size: 2,
            pixels: vec![1, 2, 3, 4, 250, 0, 0, 9],
            labels: vec![0, 1],
            row_ids: vec![0, 1],
        };
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        assert_eq!(ImageSet::read_from(&buf[..]).unwrap(), set);
        assert!(ImageSet::read_from(&buf[..10]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn inverse_recovers_values_within_quantization(values in proptest::collection::vec(0.0f64..=1.0, 2)) {
            let layout = two_feature_layout();
            let img = layout.transform_sample(ArrayView1::from(&values), 0).unwrap();
            for (a, b) in layout.inverse(&img.pixels).iter().zip(&values) {
                proptest::prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
            }
        }
    }
}
