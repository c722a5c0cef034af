//! Loading, cleaning, splitting and normalizing tabular flow datasets.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SafeError};
use crate::rng;

/// Name of the label column in files written by this crate.
pub const LABEL_COLUMN: &str = "label";

/// Share of non-missing values that must parse as numbers for a column to be
/// treated as numeric rather than categorical.
const NUMERIC_COLUMN_SHARE: f64 = 0.95;

/// A labelled feature matrix. Row `i` of `features` carries `labels[i]`
/// (0 normal, 1 attack) and originated from row `row_ids[i]` of the source
/// table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<u8>,
    column_names: Vec<String>,
    row_ids: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<u8>, column_names: Vec<String>) -> Result<Self> {
        let row_ids = (0..features.nrows()).collect();
        Self::with_row_ids(features, labels, column_names, row_ids)
    }

    pub fn with_row_ids(
        features: Array2<f64>,
        labels: Vec<u8>,
        column_names: Vec<String>,
        row_ids: Vec<usize>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if labels.len() != n || row_ids.len() != n {
            return Err(SafeError::Data(format!(
                "{n} feature rows but {} labels and {} row ids",
                labels.len(),
                row_ids.len()
            )));
        }
        if column_names.len() != d {
            return Err(SafeError::Data(format!(
                "{d} feature columns but {} column names",
                column_names.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(SafeError::Data(format!("label {bad} is not 0 or 1")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(SafeError::Data("non-finite feature value".into()));
        }
        let mut seen = HashSet::new();
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(SafeError::Data(format!("duplicate column name `{name}`")));
            }
        }
        Ok(Dataset {
            features,
            labels,
            column_names,
            row_ids,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    /// Columns whose values are all equal. They are kept, only reported.
    pub fn constant_columns(&self) -> Vec<usize> {
        self.features
            .axis_iter(Axis(1))
            .enumerate()
            .filter(|(_, col)| col.iter().all(|&v| v == col[0]))
            .map(|(j, _)| j)
            .collect()
    }

    /// Rows at `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            column_names: self.column_names.clone(),
            row_ids: rows.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    /// Columns at `columns`, in that order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.n_features()) {
            return Err(SafeError::InvalidArgument(format!(
                "column index {bad} out of range for {} features",
                self.n_features()
            )));
        }
        Dataset::with_row_ids(
            self.features.select(Axis(1), columns),
            self.labels.clone(),
            columns.iter().map(|&j| self.column_names[j].clone()).collect(),
            self.row_ids.clone(),
        )
    }

    /// Columns looked up by name, in the order given.
    pub fn select_named(&self, names: &[String]) -> Result<Dataset> {
        let index: HashMap<&str, usize> = self
            .column_names
            .iter()
            .enumerate()
            .map(|(j, n)| (n.as_str(), j))
            .collect();
        let columns = names
            .iter()
            .map(|n| {
                index
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| SafeError::Data(format!("column `{n}` not present")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.select_columns(&columns)
    }

    fn with_features(&self, features: Array2<f64>) -> Dataset {
        Dataset {
            features,
            labels: self.labels.clone(),
            column_names: self.column_names.clone(),
            row_ids: self.row_ids.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub label_column: String,
    /// Raw label values that mark an attack row; everything else is normal.
    pub positive_labels: HashSet<String>,
    /// When set, overrides `positive_labels`: every value outside this set
    /// marks an attack.
    pub normal_labels: Option<HashSet<String>>,
    pub delimiter: u8,
}

impl LoadOptions {
    pub fn new(label_column: impl Into<String>, positive_labels: impl IntoIterator<Item = impl Into<String>>) -> Self {
        LoadOptions {
            label_column: label_column.into(),
            positive_labels: positive_labels.into_iter().map(Into::into).collect(),
            normal_labels: None,
            delimiter: b',',
        }
    }

    /// Labels by listing the normal values instead of the attack values.
    pub fn with_normal_labels(label_column: impl Into<String>, normal: impl IntoIterator<Item = impl Into<String>>) -> Self {
        LoadOptions {
            normal_labels: Some(normal.into_iter().map(Into::into).collect()),
            ..LoadOptions::new(label_column, Vec::<String>::new())
        }
    }

    pub fn is_attack(&self, raw_label: &str) -> bool {
        match &self.normal_labels {
            Some(normal) => !normal.contains(raw_label),
            None => self.positive_labels.contains(raw_label),
        }
    }
}

fn is_missing(raw: &str) -> bool {
    matches!(
        raw.to_ascii_lowercase().as_str(),
        "" | "nan" | "na" | "n/a" | "null" | "none" | "?"
    )
}

fn parse_finite(raw: &str) -> Option<f64> {
    raw.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Loads a delimited table with a header row.
///
/// Numeric columns are parsed as-is. A column where fewer than 95% of the
/// non-missing values parse as finite numbers is categorical and gets integer
/// codes in order of first appearance. Rows with a missing value, or with an
/// unparseable value in a numeric column, are dropped.
pub fn load_dataset(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SafeError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == &opts.label_column)
        .ok_or_else(|| SafeError::Data(format!("label column `{}` not found", opts.label_column)))?;
    let mut records = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            continue;
        }
        records.push(record);
    }

    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&j| j != label_idx).collect();
    let numeric: Vec<bool> = feature_cols
        .iter()
        .map(|&j| {
            let (mut present, mut parsed) = (0usize, 0usize);
            for r in &records {
                let raw = &r[j];
                if !is_missing(raw) {
                    present += 1;
                    if parse_finite(raw).is_some() {
                        parsed += 1;
                    }
                }
            }
            present > 0 && parsed as f64 >= NUMERIC_COLUMN_SHARE * present as f64
        })
        .collect();

    let mut codes: Vec<HashMap<String, f64>> = vec![HashMap::new(); feature_cols.len()];
    let mut values = Vec::with_capacity(records.len() * feature_cols.len());
    let mut labels = Vec::with_capacity(records.len());
    let mut row_ids = Vec::with_capacity(records.len());
    let mut row = Vec::with_capacity(feature_cols.len());
    'rows: for (i, r) in records.iter().enumerate() {
        let raw_label = &r[label_idx];
        if is_missing(raw_label) {
            continue;
        }
        row.clear();
        for (c, &j) in feature_cols.iter().enumerate() {
            let raw = &r[j];
            if is_missing(raw) {
                continue 'rows;
            }
            if numeric[c] {
                match parse_finite(raw) {
                    Some(v) => row.push(v),
                    None => continue 'rows,
                }
            } else {
                let next = codes[c].len() as f64;
                row.push(*codes[c].entry(raw.to_owned()).or_insert(next));
            }
        }
        values.extend_from_slice(&row);
        labels.push(u8::from(opts.is_attack(raw_label)));
        row_ids.push(i);
    }
    if labels.is_empty() {
        return Err(SafeError::Data(format!("{} has no usable rows after cleaning", path.display())));
    }
    let features = Array2::from_shape_vec((labels.len(), feature_cols.len()), values)
        .map_err(|e| SafeError::Data(e.to_string()))?;
    let names = feature_cols.iter().map(|&j| headers[j].clone()).collect();
    Dataset::with_row_ids(features, labels, names, row_ids)
}

/// Reads a fully numeric table whose label column is already 0/1, as written
/// by [`write_dataset`].
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset(path, &LoadOptions::new(LABEL_COLUMN, ["1"]))
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| SafeError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = ds.column_names.clone();
    header.push(LABEL_COLUMN.to_owned());
    w.write_record(&header)?;
    let mut fields = Vec::with_capacity(header.len());
    for (row, &y) in ds.features.rows().into_iter().zip(&ds.labels) {
        fields.clear();
        fields.extend(row.iter().map(|v| v.to_string()));
        fields.push(y.to_string());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| SafeError::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(SafeError::Config(format!("split fractions must be positive: {fracs:?}")));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SafeError::Config(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Row indices of each partition: uniform random permutation, then the first
/// `floor(n * train)` rows for train, the next `floor(n * val)` for
/// validation and the remainder for test.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    if n < 5 {
        return Err(SafeError::Data(format!("cannot split {n} rows (need at least 5)")));
    }
    let n_train = (n as f64 * spec.train_frac).floor() as usize;
    let n_val = (n as f64 * spec.val_frac).floor() as usize;
    let n_test = n.saturating_sub(n_train + n_val);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(SafeError::Data(format!(
            "degenerate split of {n} rows: ({n_train}, {n_val}, {n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(spec.seed));
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok([order, val, test])
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let [train, val, test] = split_indices(ds.n_rows(), spec)?;
    Ok(Split {
        train: ds.subset(&train),
        val: ds.subset(&val),
        test: ds.subset(&test),
    })
}

/// Keeps only the normal (label 0) rows.
pub fn filter_normal(ds: &Dataset) -> Result<Dataset> {
    let rows: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.labels[i] == 0).collect();
    if rows.is_empty() {
        return Err(SafeError::Data("dataset has no normal rows".into()));
    }
    Ok(ds.subset(&rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Per-column min-max scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub columns: Vec<ColumnRange>,
}

/// Fits per-column ranges. Callers pass `filter_normal(&split.train)`.
pub fn fit_normalizer(train_normal: &Dataset) -> Result<Normalizer> {
    if train_normal.is_empty() {
        return Err(SafeError::Data("cannot fit a normalizer on zero rows".into()));
    }
    let columns = train_normal
        .features
        .axis_iter(Axis(1))
        .zip(&train_normal.column_names)
        .map(|(col, name)| {
            let (min, max) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            ColumnRange {
                name: name.clone(),
                min,
                max,
            }
        })
        .collect();
    Ok(Normalizer { columns })
}

impl ColumnRange {
    /// `(x - min) / (max - min)` clipped to [0, 1]; 0 for constant columns.
    pub fn scale(&self, x: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 {
            0.0
        } else {
            ((x - self.min) / span).clamp(0.0, 1.0)
        }
    }
}

impl Normalizer {
    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn scale_row(&self, row: &[f64], out: &mut [f64]) {
        for ((o, &x), c) in out.iter_mut().zip(row).zip(&self.columns) {
            *o = c.scale(x);
        }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.column_names != self.names() {
            return Err(SafeError::Data(
                "dataset columns do not match the fitted normalizer".into(),
            ));
        }
        let mut out = ds.features.clone();
        for (mut col, c) in out.axis_iter_mut(Axis(1)).zip(&self.columns) {
            col.mapv_inplace(|x| c.scale(x));
        }
        Ok(ds.with_features(out))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }
}

pub(crate) fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| SafeError::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SafeError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn toy(n: usize) -> Dataset {
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let labels = (0..n).map(|i| (i % 3 == 1) as u8).collect();
        Dataset::new(features, labels, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn labels_follow_positive_value_set() {
        let f = write_tmp("dur,proto,label\n1,tcp,normal\n2,udp,dos\n3,tcp,normal\n4,icmp,scan\n");
        let ds = load_dataset(f.path(), &LoadOptions::new("label", ["dos", "scan"])).unwrap();
        assert_eq!(ds.labels(), &[0, 1, 0, 1]);
        assert_eq!(ds.column_names(), &["dur".to_string(), "proto".to_string()]);
        // categorical codes by first appearance
        assert_eq!(ds.features().column(1).to_vec(), vec![0.0, 1.0, 0.0, 2.0]);
        let by_normal = load_dataset(f.path(), &LoadOptions::with_normal_labels("label", ["normal"])).unwrap();
        assert_eq!(by_normal.labels(), ds.labels());
    }

    #[test]
    fn constant_column_is_kept_and_flagged() {
        let f = write_tmp("a,c,label\n1,7,0\n2,7,1\n3,7,0\n");
        let ds = load_dataset(f.path(), &LoadOptions::new("label", ["1"])).unwrap();
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.constant_columns(), vec![1]);
    }

    #[test]
    fn rows_with_missing_or_bad_values_are_dropped() {
        let mut text = String::from("a,b,label\n");
        for i in 0..40 {
            text.push_str(&format!("{i},{},0\n", i * 2));
        }
        text.push_str("1,,0\n");
        text.push_str("1,oops,1\n");
        text.push_str("1,inf,1\n");
        let f = write_tmp(&text);
        let ds = load_dataset(f.path(), &LoadOptions::new("label", ["1"])).unwrap();
        assert_eq!(ds.n_rows(), 40);
        assert!(ds.labels().iter().all(|&y| y == 0));
    }

    #[test]
    fn load_errors() {
        let missing = load_dataset("/nonexistent/flows.csv", &LoadOptions::new("label", ["1"]));
        assert!(matches!(missing, Err(SafeError::Io { .. })));

        let f = write_tmp("a,b\n1,2\n");
        let no_label = load_dataset(f.path(), &LoadOptions::new("label", ["1"]));
        assert!(matches!(no_label, Err(SafeError::Data(_))));

        let f = write_tmp("a,label\n,0\nNaN,1\n");
        let empty = load_dataset(f.path(), &LoadOptions::new("label", ["1"]));
        assert!(matches!(empty, Err(SafeError::Data(_))));
    }

    #[test]
    fn split_sizes_and_remainder() {
        let spec = SplitSpec {
            seed: 7,
            ..SplitSpec::default()
        };
        let [a, b, c] = split_indices(10, &spec).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        let [a, b, c] = split_indices(11, &spec).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 3));
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let ds = toy(10);
        let spec = SplitSpec {
            seed: 7,
            ..SplitSpec::default()
        };
        let s1 = split(&ds, &spec).unwrap();
        let s2 = split(&ds, &spec).unwrap();
        assert_eq!(s1, s2);
        let mut ids: Vec<usize> = [&s1.train, &s1.val, &s1.test]
            .iter()
            .flat_map(|d| d.row_ids().to_vec())
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_bad_specs() {
        let bad = SplitSpec {
            train_frac: 0.5,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 0,
        };
        assert!(matches!(split_indices(100, &bad), Err(SafeError::Config(_))));
        assert!(split_indices(4, &SplitSpec::default()).is_err());
        let lopsided = SplitSpec {
            train_frac: 0.98,
            val_frac: 0.01,
            test_frac: 0.01,
            seed: 0,
        };
        assert!(matches!(split_indices(20, &lopsided), Err(SafeError::Data(_))));
    }

    #[test]
    fn filter_normal_cases() {
        let mk = |labels: Vec<u8>| {
            let n = labels.len();
            Dataset::new(Array2::zeros((n, 1)), labels, vec!["x".into()]).unwrap()
        };
        assert_eq!(filter_normal(&mk(vec![0, 1, 0])).unwrap().n_rows(), 2);
        assert!(filter_normal(&mk(vec![1, 1])).is_err());
        let all = mk(vec![0, 0, 0]);
        assert_eq!(filter_normal(&all).unwrap(), all);
    }

    #[test]
    fn normalizer_scales_clips_and_handles_constants() {
        let train = Dataset::new(
            array![[0.0, 3.0], [5.0, 3.0], [10.0, 3.0]],
            vec![0, 0, 0],
            vec!["x".into(), "c".into()],
        )
        .unwrap();
        let nrm = fit_normalizer(&train).unwrap();
        let out = nrm.apply(&train).unwrap();
        assert_eq!(out.features().column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(out.features().column(1).to_vec(), vec![0.0, 0.0, 0.0]);

        let test = Dataset::new(array![[20.0, 9.0], [-4.0, 1.0]], vec![1, 0], vec!["x".into(), "c".into()])
            .unwrap();
        let out = nrm.apply(&test).unwrap();
        assert_eq!(out.features().column(0).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn dataset_rejects_duplicate_names_and_bad_labels() {
        assert!(Dataset::new(Array2::zeros((1, 2)), vec![0], vec!["a".into(), "a".into()]).is_err());
        assert!(Dataset::new(Array2::zeros((1, 1)), vec![2], vec!["a".into()]).is_err());
        assert!(Dataset::new(array![[f64::NAN]], vec![0], vec!["a".into()]).is_err());
    }

    #[test]
    fn written_datasets_read_back() {
        let ds = toy(6);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_dataset(&ds, f.path()).unwrap();
        let back = read_dataset(f.path()).unwrap();
        assert_eq!(back.features(), ds.features());
        assert_eq!(back.labels(), ds.labels());
    }

    proptest::proptest! {
        #[test]
        fn normalized_values_stay_in_unit_interval(
            train in proptest::collection::vec(-1e6f64..1e6, 2..30),
            probe in proptest::collection::vec(-1e9f64..1e9, 1..30),
        ) {
            let n = train.len();
            let ds = Dataset::new(Array2::from_shape_vec((n, 1), train).unwrap(), vec![0; n], vec!["x".into()]).unwrap();
            let nrm = fit_normalizer(&ds).unwrap();
            for x in probe {
                let v = nrm.columns[0].scale(x);
                proptest::prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
