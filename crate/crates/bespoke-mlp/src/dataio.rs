//! Tabular dataset ingestion, normalization, splitting and cross-validation.
//!
//! Datasets are plain CSV-like text files: one sample per row, numeric
//! attribute columns plus one label column (any text). Labels are remapped
//! to dense ids `0..n_classes` on load and the mapping is preserved in a
//! [`DatasetManifest`] so that downstream artifacts (reports, golden
//! vectors) can name the original classes.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// In-memory classification dataset.
///
/// Invariants: `features` is rectangular, `labels.len() == features.len()`,
/// every label is `< n_classes`, and `attribute_names.len()` equals the
/// column count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub attribute_names: Vec<String>,
    pub n_classes: usize,
}

impl Dataset {
    /// Build a dataset and check its invariants.
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        attribute_names: Vec<String>,
        n_classes: usize,
    ) -> Result<Self> {
        let d = Dataset {
            features,
            labels,
            attribute_names,
            n_classes,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn n_rows(&self) -> usize {
        self.features.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Number of samples per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// New dataset holding the given rows (indices must be in range).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            attribute_names: self.attribute_names.clone(),
            n_classes: self.n_classes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::InvalidInput("no rows".into()));
        }
        if self.labels.len() != self.features.len() {
            return Err(Error::InvalidInput(format!(
                "{} feature rows but {} labels",
                self.features.len(),
                self.labels.len()
            )));
        }
        let width = self.features[0].len();
        if width == 0 {
            return Err(Error::InvalidInput("rows have no attribute columns".into()));
        }
        if let Some(bad) = self.features.iter().position(|r| r.len() != width) {
            return Err(Error::InvalidInput(format!(
                "ragged feature matrix: row {bad} has {} columns, expected {width}",
                self.features[bad].len()
            )));
        }
        if self.attribute_names.len() != width {
            return Err(Error::InvalidInput(format!(
                "{} attribute names for {width} columns",
                self.attribute_names.len()
            )));
        }
        if self.n_classes == 0 {
            return Err(Error::InvalidInput("n_classes is zero".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {} classes",
                self.n_classes
            )));
        }
        Ok(())
    }
}

/// Train/test split parameters. `train_ratio` defaults to 0.7.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_ratio: 0.7,
            seed: 0,
        }
    }
}

/// Column separator for [`load_csv`].
///
/// `Whitespace` collapses runs of spaces and tabs, which is how several UCI
/// files (e.g. Seeds) are formatted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    Char(char),
    Whitespace,
}

impl fmt::Display for Delimiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delimiter::Char(c) => write!(f, "{c}"),
            Delimiter::Whitespace => write!(f, "whitespace"),
        }
    }
}

/// Which column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelColumn {
    /// 0-based column index.
    Index(usize),
    /// Header name; implies the file has a header row.
    Name(String),
    /// Rightmost column (the common UCI layout).
    Last,
}

/// Options for [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub delimiter: Delimiter,
    pub label_column: LabelColumn,
    /// `None` auto-detects: the first row is a header iff any non-label
    /// cell fails to parse as a number.
    pub has_header: Option<bool>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: Delimiter::Char(','),
            label_column: LabelColumn::Last,
            has_header: None,
        }
    }
}

/// Mapping from original label text to dense class ids.
///
/// Ids are assigned by sorting the distinct original labels, numerically
/// when every label parses as a number and lexicographically otherwise, so
/// the mapping does not depend on row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    /// `values[id]` is the original label text for dense id `id`.
    pub values: Vec<String>,
}

impl LabelMap {
    pub fn id_of(&self, original: &str) -> Option<usize> {
        self.values.iter().position(|v| v == original)
    }

    pub fn original(&self, id: usize) -> Option<&str> {
        self.values.get(id).map(String::as_str)
    }
}

fn build_label_map(raw: &[String]) -> LabelMap {
    let mut distinct: Vec<String> = Vec::new();
    for l in raw {
        if !distinct.contains(l) {
            distinct.push(l.clone());
        }
    }
    let all_numeric: Option<Vec<f64>> = distinct
        .iter()
        .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect();
    match all_numeric {
        Some(nums) => {
            let mut order: Vec<usize> = (0..distinct.len()).collect();
            order.sort_by(|&a, &b| {
                nums[a]
                    .partial_cmp(&nums[b])
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            LabelMap {
                values: order.into_iter().map(|i| distinct[i].clone()).collect(),
            }
        }
        None => {
            distinct.sort();
            LabelMap { values: distinct }
        }
    }
}

fn split_row(line: &str, delimiter: Delimiter) -> Vec<String> {
    match delimiter {
        Delimiter::Whitespace => line.split_whitespace().map(str::to_string).collect(),
        Delimiter::Char(c) => line.split(c).map(|s| s.trim().to_string()).collect(),
    }
}

/// Load a delimited text file into a [`Dataset`].
///
/// Every non-label cell must parse as a finite number; the label cell may
/// be arbitrary text. Returns the dataset together with the label mapping.
pub fn load_csv(path: &Path, opts: &LoadOptions) -> Result<(Dataset, LabelMap)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<(usize, Vec<String>)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, split_row(l, opts.delimiter)))
        .collect();
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("no rows in {}", path.display())));
    }

    let width = rows[0].1.len();
    for (line_no, cells) in &rows {
        if cells.len() != width {
            return Err(Error::Parse {
                row: *line_no,
                column: cells.len().min(width) + 1,
                message: format!("expected {width} columns, found {}", cells.len()),
            });
        }
    }

    // Resolve the label column; a name forces header interpretation.
    let (label_idx, header): (usize, Option<&[String]>) = match &opts.label_column {
        LabelColumn::Index(i) => {
            if *i >= width {
                return Err(Error::InvalidInput(format!(
                    "label column index {i} out of range for {width} columns"
                )));
            }
            (*i, None)
        }
        LabelColumn::Last => (width - 1, None),
        LabelColumn::Name(name) => {
            let first = &rows[0].1;
            match first.iter().position(|c| c == name) {
                Some(i) => (i, Some(first.as_slice())),
                None => {
                    return Err(Error::InvalidInput(format!(
                        "label column {name:?} not found in header {first:?}"
                    )))
                }
            }
        }
    };

    // Header detection: any non-label cell of the first row that is not a
    // number means the first row is a header.
    let has_header = match (header.is_some(), opts.has_header) {
        (true, _) => true,
        (false, Some(h)) => h,
        (false, None) => rows[0]
            .1
            .iter()
            .enumerate()
            .any(|(i, c)| i != label_idx && c.parse::<f64>().is_err()),
    };

    let attribute_names: Vec<String> = if has_header {
        rows[0]
            .1
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != label_idx)
            .map(|(_, c)| c.clone())
            .collect()
    } else {
        (0..width - 1).map(|i| format!("f{i}")).collect()
    };

    let data_rows = if has_header { &rows[1..] } else { &rows[..] };
    if data_rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no data rows in {} (header only)",
            path.display()
        )));
    }

    let mut features = Vec::with_capacity(data_rows.len());
    let mut raw_labels = Vec::with_capacity(data_rows.len());
    for (line_no, cells) in data_rows {
        let mut row = Vec::with_capacity(width - 1);
        for (col, cell) in cells.iter().enumerate() {
            if col == label_idx {
                raw_labels.push(cell.clone());
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(Error::Parse {
                        row: *line_no,
                        column: col + 1,
                        message: format!("cannot parse {cell:?} as a number"),
                    })
                }
            }
        }
        features.push(row);
    }

    let map = build_label_map(&raw_labels);
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| map.id_of(l).expect("label present in its own map"))
        .collect();
    let n_classes = map.values.len();
    let dataset = Dataset::new(features, labels, attribute_names, n_classes)?;
    Ok((dataset, map))
}

/// Per-column min/max gathered from a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Columns where max == min; these map to 0 under [`NormStats::apply`].
    pub constant_columns: Vec<usize>,
}

impl NormStats {
    /// Gather stats from `source` (use the training split only, so that the
    /// test split stays unseen).
    pub fn fit(source: &Dataset) -> NormStats {
        let n = source.n_features();
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for row in &source.features {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        let constant_columns: Vec<usize> = (0..n).filter(|&j| max[j] == min[j]).collect();
        for &j in &constant_columns {
            log::warn!(
                "column {j} ({}) is constant at {}; it will normalize to 0",
                source.attribute_names[j],
                min[j]
            );
        }
        NormStats {
            min,
            max,
            constant_columns,
        }
    }

    /// Min-max scale every column into [0, 1], clamping values that fall
    /// outside the fitted range. Constant columns map to 0.
    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        if d.n_features() != self.min.len() {
            return Err(Error::InvalidInput(format!(
                "normalization stats cover {} columns, dataset has {}",
                self.min.len(),
                d.n_features()
            )));
        }
        let mut out = d.clone();
        for row in &mut out.features {
            for (j, v) in row.iter_mut().enumerate() {
                let range = self.max[j] - self.min[j];
                *v = if range == 0.0 {
                    0.0
                } else {
                    ((*v - self.min[j]) / range).clamp(0.0, 1.0)
                };
            }
        }
        Ok(out)
    }
}

/// Fit stats on `stats_source` and apply them to `d` in one step.
pub fn normalize(d: &Dataset, stats_source: &Dataset) -> Result<Dataset> {
    NormStats::fit(stats_source).apply(d)
}

/// Row indices per class, each shuffled with a class-specific stream.
fn shuffled_class_indices(d: &Dataset, seed: u64) -> Vec<Vec<usize>> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); d.n_classes];
    for (i, &l) in d.labels.iter().enumerate() {
        per_class[l].push(i);
    }
    for (c, indices) in per_class.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        indices.shuffle(&mut rng);
    }
    per_class
}

/// Stratified train/test split.
///
/// The total train count is `round(rows * train_ratio)`, distributed over
/// classes by largest remainder so per-class proportions are as close to
/// the ratio as integer counts allow. Every class with at least two samples
/// appears in both splits; a single-sample class goes entirely to train
/// with a warning. Deterministic for a fixed seed.
pub fn split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_ratio > 0.0 && spec.train_ratio < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train_ratio must be in (0,1), got {}",
            spec.train_ratio
        )));
    }
    if d.n_rows() < 2 {
        return Err(Error::InvalidInput("need at least 2 rows to split".into()));
    }
    let per_class = shuffled_class_indices(d, spec.seed);
    let counts: Vec<usize> = per_class.iter().map(Vec::len).collect();
    let total_train = ((d.n_rows() as f64) * spec.train_ratio).round() as usize;
    let total_train = total_train.clamp(1, d.n_rows() - 1);

    // Largest-remainder apportionment of the train quota over classes.
    let mut quota: Vec<usize> = counts
        .iter()
        .map(|&c| ((c as f64) * spec.train_ratio).floor() as usize)
        .collect();
    let mut remainders: Vec<(usize, f64)> = counts
        .iter()
        .enumerate()
        .map(|(c, &n)| (c, (n as f64) * spec.train_ratio - quota[c] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let assigned: usize = quota.iter().sum();
    let mut leftover = total_train.saturating_sub(assigned);
    for (c, _) in remainders {
        if leftover == 0 {
            break;
        }
        if quota[c] < counts[c] {
            quota[c] += 1;
            leftover -= 1;
        }
    }

    // Repair quotas so each class with >= 2 samples lands in both splits.
    for c in 0..quota.len() {
        let (lo, hi) = match counts[c] {
            0 => (0, 0),
            1 => {
                log::warn!("class {c} has a single sample; assigning it to train");
                (1, 1)
            }
            n => (1, n - 1),
        };
        while quota[c] < lo {
            // Take one unit from the class with the most headroom.
            let donor = (0..quota.len())
                .filter(|&o| o != c && quota[o] > 1)
                .max_by_key(|&o| quota[o]);
            match donor {
                Some(o) => {
                    quota[o] -= 1;
                    quota[c] += 1;
                }
                None => break,
            }
        }
        while quota[c] > hi {
            let receiver = (0..quota.len())
                .filter(|&o| o != c && counts[o] >= 2 && quota[o] < counts[o] - 1)
                .min_by_key(|&o| quota[o]);
            match receiver {
                Some(o) => {
                    quota[o] += 1;
                    quota[c] -= 1;
                }
                None => break,
            }
        }
    }

    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (c, indices) in per_class.iter().enumerate() {
        train_idx.extend_from_slice(&indices[..quota[c]]);
        test_idx.extend_from_slice(&indices[quota[c]..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::InvalidInput(
            "split produced an empty partition; dataset too small for ratio".into(),
        ));
    }
    Ok((d.subset(&train_idx), d.subset(&test_idx)))
}

/// Stratified k-fold cross validation pairs.
///
/// Rows of each class are dealt round-robin over the folds, so validation
/// folds partition the dataset and class balance is preserved within one
/// sample. Requires `2 <= k <= rows`.
pub fn kfold(d: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be >= 2, got {k}")));
    }
    if k > d.n_rows() {
        return Err(Error::InvalidInput(format!(
            "k = {k} exceeds row count {}",
            d.n_rows()
        )));
    }
    let per_class = shuffled_class_indices(d, seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0usize;
    for indices in &per_class {
        for &i in indices {
            folds[next % k].push(i);
            next += 1;
        }
    }
    let mut out = Vec::with_capacity(k);
    for f in 0..k {
        let mut valid_idx = folds[f].clone();
        valid_idx.sort_unstable();
        let mut train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        train_idx.sort_unstable();
        out.push((d.subset(&train_idx), d.subset(&valid_idx)));
    }
    Ok(out)
}

/// Everything needed to reproduce a prepared dataset: where it came from,
/// how it was parsed, the label mapping, the normalization statistics and
/// the split parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_path: String,
    pub delimiter: String,
    pub label_column: LabelColumn,
    pub has_header: bool,
    pub attribute_names: Vec<String>,
    pub label_map: LabelMap,
    pub n_classes: usize,
    pub normalization: NormStats,
    pub split: SplitSpec,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(Error::from)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(Error::from)
    }

    /// Reload the dataset this manifest describes and reproduce the exact
    /// normalized train/test split it records.
    pub fn prepare(&self, base_dir: &Path) -> Result<(Dataset, Dataset)> {
        let path = {
            let p = Path::new(&self.dataset_path);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        let delimiter = if self.delimiter == "whitespace" {
            Delimiter::Whitespace
        } else {
            Delimiter::Char(self.delimiter.chars().next().unwrap_or(','))
        };
        let opts = LoadOptions {
            delimiter,
            label_column: self.label_column.clone(),
            has_header: Some(self.has_header),
        };
        let (dataset, map) = load_csv(&path, &opts)?;
        if map != self.label_map {
            return Err(Error::InvalidInput(format!(
                "label map of {} changed since the manifest was written",
                path.display()
            )));
        }
        let (train, test) = split(&dataset, &self.split)?;
        let norm_train = self.normalization.apply(&train)?;
        let norm_test = self.normalization.apply(&test)?;
        Ok((norm_train, norm_test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn labels_remap_to_dense_sorted_ids() {
        let f = write_temp("1.0,2.0,5\n2.0,3.0,6\n3.0,4.0,5\n");
        let (d, map) = load_csv(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(d.labels, vec![0, 1, 0]);
        assert_eq!(d.n_classes, 2);
        assert_eq!(map.values, vec!["5", "6"]);
        assert_eq!(d.attribute_names, vec!["f0", "f1"]);
    }

    #[test]
    fn empty_file_is_rejected() {
        let f = write_temp("");
        let err = load_csv(f.path(), &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("no rows"), "{err}");
    }

    #[test]
    fn non_numeric_feature_cell_reports_location() {
        let f = write_temp("1.0,2.0,a\n1.0,oops,b\n");
        let err = load_csv(f.path(), &LoadOptions::default()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!((row, column), (2, 2));
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn header_detected_and_label_by_name() {
        let f = write_temp("a,b,class\n0.5,1.5,x\n0.25,2.5,y\n");
        let opts = LoadOptions {
            label_column: LabelColumn::Name("class".into()),
            ..LoadOptions::default()
        };
        let (d, map) = load_csv(f.path(), &opts).unwrap();
        assert_eq!(d.attribute_names, vec!["a", "b"]);
        assert_eq!(map.values, vec!["x", "y"]);
        assert_eq!(d.n_rows(), 2);
    }

    #[test]
    fn whitespace_delimiter_collapses_runs() {
        let f = write_temp("1.0   2.0\t 1\n3.0 4.0  2\n");
        let opts = LoadOptions {
            delimiter: Delimiter::Whitespace,
            ..LoadOptions::default()
        };
        let (d, _) = load_csv(f.path(), &opts).unwrap();
        assert_eq!(d.features, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn normalize_scales_and_clamps() {
        let train = Dataset::new(
            vec![vec![0.0, 4.0], vec![5.0, 4.0], vec![10.0, 4.0]],
            vec![0, 1, 0],
            vec!["a".into(), "b".into()],
            2,
        )
        .unwrap();
        let stats = NormStats::fit(&train);
        assert_eq!(stats.constant_columns, vec![1]);
        let scaled = stats.apply(&train).unwrap();
        let col0: Vec<f64> = scaled.features.iter().map(|r| r[0]).collect();
        assert_eq!(col0, vec![0.0, 0.5, 1.0]);
        let col1: Vec<f64> = scaled.features.iter().map(|r| r[1]).collect();
        assert_eq!(col1, vec![0.0, 0.0, 0.0]);

        let test = Dataset::new(
            vec![vec![12.0, 9.0]],
            vec![0],
            vec!["a".into(), "b".into()],
            2,
        )
        .unwrap();
        let scaled_test = stats.apply(&test).unwrap();
        assert_eq!(scaled_test.features[0], vec![1.0, 0.0]);
    }

    #[test]
    fn normalization_is_idempotent_on_unit_range() {
        let d = Dataset::new(
            vec![vec![0.0], vec![0.25], vec![1.0]],
            vec![0, 1, 0],
            vec!["a".into()],
            2,
        )
        .unwrap();
        let once = normalize(&d, &d).unwrap();
        let twice = normalize(&once, &once).unwrap();
        assert_eq!(once, twice);
    }

    fn toy(n: usize, n_classes: usize) -> Dataset {
        let features = (0..n).map(|i| vec![i as f64, (i * 7 % 13) as f64]).collect();
        let labels = (0..n).map(|i| i % n_classes).collect();
        Dataset::new(features, labels, vec!["a".into(), "b".into()], n_classes).unwrap()
    }

    #[test]
    fn split_counts_and_determinism() {
        let d = toy(10, 2);
        let spec = SplitSpec {
            train_ratio: 0.7,
            seed: 1,
        };
        let (train, test) = split(&d, &spec).unwrap();
        assert_eq!((train.n_rows(), test.n_rows()), (7, 3));
        let (train2, test2) = split(&d, &spec).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn split_is_a_partition() {
        let d = toy(37, 3);
        let (train, test) = split(&d, &SplitSpec::default()).unwrap();
        assert_eq!(train.n_rows() + test.n_rows(), d.n_rows());
        let mut rows: Vec<Vec<f64>> = train
            .features
            .iter()
            .chain(test.features.iter())
            .cloned()
            .collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut orig = d.features.clone();
        orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, orig);
    }

    #[test]
    fn split_is_balanced_on_balanced_data() {
        let d = toy(100, 2);
        let (train, test) = split(
            &d,
            &SplitSpec {
                train_ratio: 0.7,
                seed: 9,
            },
        )
        .unwrap();
        let tc = train.class_counts();
        let sc = test.class_counts();
        assert!((tc[0] as i64 - tc[1] as i64).abs() <= 1, "{tc:?}");
        assert!((sc[0] as i64 - sc[1] as i64).abs() <= 1, "{sc:?}");
    }

    #[test]
    fn every_class_lands_in_both_splits() {
        // 3 classes with very uneven counts.
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (class, count) in [(0usize, 40usize), (1, 5), (2, 2)] {
            for i in 0..count {
                features.push(vec![i as f64, class as f64]);
                labels.push(class);
            }
        }
        let d = Dataset::new(features, labels, vec!["a".into(), "b".into()], 3).unwrap();
        let (train, test) = split(&d, &SplitSpec::default()).unwrap();
        for c in 0..3 {
            assert!(train.class_counts()[c] >= 1, "class {c} missing from train");
            assert!(test.class_counts()[c] >= 1, "class {c} missing from test");
        }
    }

    #[test]
    fn kfold_partitions_dataset() {
        let d = toy(10, 2);
        let folds = kfold(&d, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = Vec::new();
        for (train, valid) in &folds {
            assert_eq!(valid.n_rows(), 2);
            assert_eq!(train.n_rows(), 8);
            seen.extend(valid.features.iter().cloned());
        }
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut orig = d.features.clone();
        orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(seen, orig);
    }

    #[test]
    fn kfold_uneven_sizes() {
        let d = toy(3, 1);
        let folds = kfold(&d, 2, 0).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|(_, v)| v.n_rows()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 2]);
    }

    #[test]
    fn kfold_rejects_k_larger_than_rows() {
        let d = toy(3, 1);
        assert!(kfold(&d, 4, 0).is_err());
        assert!(kfold(&d, 1, 0).is_err());
    }

    #[test]
    fn manifest_roundtrip_reproduces_split() {
        let csv = "0.1,0.2,a\n0.3,0.4,b\n0.5,0.6,a\n0.7,0.8,b\n0.9,1.0,a\n1.1,1.2,b\n";
        let f = write_temp(csv);
        let (d, map) = load_csv(f.path(), &LoadOptions::default()).unwrap();
        let spec = SplitSpec {
            train_ratio: 0.7,
            seed: 11,
        };
        let (train, test) = split(&d, &spec).unwrap();
        let stats = NormStats::fit(&train);
        let manifest = DatasetManifest {
            dataset_path: f.path().display().to_string(),
            delimiter: ",".into(),
            label_column: LabelColumn::Last,
            has_header: false,
            attribute_names: d.attribute_names.clone(),
            label_map: map,
            n_classes: d.n_classes,
            normalization: stats.clone(),
            split: spec,
        };
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("manifest.json");
        manifest.save(&mpath).unwrap();
        let loaded = DatasetManifest::load(&mpath).unwrap();
        assert_eq!(loaded, manifest);
        let (tr, te) = loaded.prepare(dir.path()).unwrap();
        assert_eq!(tr, stats.apply(&train).unwrap());
        assert_eq!(te, stats.apply(&test).unwrap());
    }
}
