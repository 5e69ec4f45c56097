//! Multi-view dataset representation, file ingestion and preprocessing.
//!
//! A [`MultiViewDataset`] holds `n` instances observed in `m >= 2` views. Each
//! view is stored as a dense `n x D` matrix; sparse coordinate files are
//! expanded on load.
//!
//! File formats:
//!
//! * dense CSV: comma-separated reals, one instance per line, optional header
//!   row that can be skipped;
//! * sparse COO: a first line `%n D` declaring the shape, then `row,col,value`
//!   lines with 0-based indices. Repeated coordinates are summed;
//! * labels: one non-negative integer class id per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One view: an `n x D` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMatrix {
    data: Array2<f64>,
    feature_names: Option<Vec<String>>,
}

impl ViewMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::InvalidParameter("a view needs at least one feature".into()));
        }
        if let Some(((i, j), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("view entry ({i}, {j})"),
            });
        }
        Ok(Self {
            data,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature names for {} features",
                names.len(),
                self.n_features()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.data.ncols()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Keeps only the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<ViewMatrix> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.n_features()) {
            return Err(Error::InvalidParameter(format!(
                "column {bad} out of range for {} features",
                self.n_features()
            )));
        }
        let data = self.data.select(Axis(1), columns);
        let feature_names = self
            .feature_names
            .as_ref()
            .map(|names| columns.iter().map(|&c| names[c].clone()).collect());
        Ok(ViewMatrix { data, feature_names })
    }
}

/// `n` instances observed in `m >= 2` views, with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    views: Vec<ViewMatrix>,
    labels: Option<Vec<usize>>,
}

impl MultiViewDataset {
    pub fn new(views: Vec<ViewMatrix>, labels: Option<Vec<usize>>) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::TooFewViews(views.len()));
        }
        let n = views[0].n_rows();
        for (v, view) in views.iter().enumerate().skip(1) {
            if view.n_rows() != n {
                return Err(Error::RowCountMismatch {
                    view: v,
                    expected: n,
                    found: view.n_rows(),
                });
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {n} instances",
                    labels.len()
                )));
            }
        }
        Ok(Self { views, labels })
    }

    pub fn n(&self) -> usize {
        self.views[0].n_rows()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn views(&self) -> &[ViewMatrix] {
        &self.views
    }

    pub fn view(&self, v: usize) -> &ViewMatrix {
        &self.views[v]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    #[default]
    DenseCsv,
    SparseCoo,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub format: FileFormat,
    /// Skip one header row in dense CSV files.
    pub skip_header: bool,
    pub label_path: Option<PathBuf>,
}

/// Loads one file per view plus optional labels.
pub fn load_dataset<P: AsRef<Path>>(paths: &[P], options: &LoadOptions) -> Result<MultiViewDataset> {
    if paths.len() < 2 {
        return Err(Error::TooFewViews(paths.len()));
    }
    let views = paths
        .iter()
        .map(|p| match options.format {
            FileFormat::DenseCsv => read_dense_csv(p.as_ref(), options.skip_header),
            FileFormat::SparseCoo => read_sparse_coo(p.as_ref()),
        })
        .map(|m| m.and_then(ViewMatrix::new))
        .collect::<Result<Vec<_>>>()?;
    let labels = options.label_path.as_ref().map(|p| read_labels(p)).transpose()?;
    MultiViewDataset::new(views, labels)
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_real(path: &Path, line: usize, token: &str) -> Result<f64> {
    let value: f64 = token
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: {token:?}")))?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: format!("{}:{line}", path.display()),
        });
    }
    Ok(value)
}

pub fn read_dense_csv(path: &Path, skip_header: bool) -> Result<Array2<f64>> {
    let reader = open(path)?;
    let mut values = Vec::new();
    let mut n_cols = None;
    let mut n_rows = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if idx == 0 && skip_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for token in line.split(',') {
            values.push(parse_real(path, lineno, token)?);
        }
        let width = values.len() - before;
        match n_cols {
            None => n_cols = Some(width),
            Some(w) if w != width => {
                return Err(parse_err(path, lineno, format!("expected {w} columns, found {width}")))
            }
            _ => {}
        }
        n_rows += 1;
    }
    let n_cols = n_cols.ok_or_else(|| parse_err(path, 0, "empty file"))?;
    Ok(Array2::from_shape_vec((n_rows, n_cols), values).expect("shape checked while parsing"))
}

pub fn read_sparse_coo(path: &Path) -> Result<Array2<f64>> {
    let reader = open(path)?;
    let mut lines = reader.lines().enumerate();
    let (rows, cols) = loop {
        let Some((idx, line)) = lines.next() else {
            return Err(parse_err(path, 0, "missing `%n D` shape line"));
        };
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(rest) = line.strip_prefix('%') else {
            return Err(parse_err(path, idx + 1, "first line must be `%n D`"));
        };
        let dims: Vec<&str> = rest
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        let parse_dim = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| parse_err(path, idx + 1, format!("bad dimension {t:?}")))
        };
        if dims.len() != 2 {
            return Err(parse_err(path, idx + 1, "shape line needs two integers"));
        }
        break (parse_dim(dims[0])?, parse_dim(dims[1])?);
    };
    let mut m = Array2::zeros((rows, cols));
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let lineno = idx + 1;
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(parse_err(path, lineno, "expected `row,col,value`"));
        }
        let index = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(path, lineno, format!("bad index {t:?}")))
        };
        let (r, c) = (index(parts[0])?, index(parts[1])?);
        let v = parse_real(path, lineno, parts[2])?;
        if r >= rows || c >= cols {
            return Err(Error::IndexOutOfRange {
                row: r,
                col: c,
                rows,
                cols,
            });
        }
        m[[r, c]] += v;
    }
    Ok(m)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let reader = open(path)?;
    let mut labels = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        labels.push(
            t.parse::<usize>()
                .map_err(|_| parse_err(path, idx + 1, format!("bad class id {t:?}")))?,
        );
    }
    Ok(labels)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_dense_csv(path: &Path, m: ArrayView2<'_, f64>, header: Option<&[String]>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    if let Some(names) = header {
        writeln!(w, "{}", names.join(",")).map_err(io)?;
    }
    for row in m.rows() {
        let line = row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes the nonzero entries of `m` in the sparse COO text format.
pub fn write_sparse_coo(path: &Path, m: ArrayView2<'_, f64>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "%{} {}", m.nrows(), m.ncols()).map_err(io)?;
    for ((i, j), v) in m.indexed_iter() {
        if *v != 0.0 {
            writeln!(w, "{i},{j},{v}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for l in labels {
        writeln!(w, "{l}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// A row that could not be scaled to unit length because it is all zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroRow {
    pub view: usize,
    pub row: usize,
}

/// Scales every nonzero row of every view to unit Euclidean norm.
///
/// All-zero rows are left untouched and reported.
pub fn normalize_unit_length(dataset: &MultiViewDataset) -> (MultiViewDataset, Vec<ZeroRow>) {
    let mut zero_rows = Vec::new();
    let views = dataset
        .views
        .iter()
        .enumerate()
        .map(|(v, view)| {
            let mut data = view.data.clone();
            for (i, mut row) in data.rows_mut().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if norm > 0.0 {
                    row.mapv_inplace(|x| x / norm);
                } else {
                    zero_rows.push(ZeroRow { view: v, row: i });
                }
            }
            ViewMatrix {
                data,
                feature_names: view.feature_names.clone(),
            }
        })
        .collect();
    if !zero_rows.is_empty() {
        log::warn!("{} all-zero rows left unnormalized", zero_rows.len());
    }
    let normalized = MultiViewDataset {
        views,
        labels: dataset.labels.clone(),
    };
    (normalized, zero_rows)
}

/// Parameters of the planted-cluster generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub n: usize,
    pub clusters: usize,
    pub informative: usize,
    pub noise: usize,
    /// Standard deviation of within-cluster and noise-feature values.
    pub noise_scale: f64,
    /// Standard deviation of the cluster centers on informative features.
    pub separation: f64,
    pub views: usize,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n: 150,
            clusters: 3,
            informative: 10,
            noise: 90,
            noise_scale: 1.0,
            separation: 3.0,
            views: 2,
            seed: 1,
        }
    }
}

pub const INFORMATIVE_PREFIX: &str = "informative_";
pub const NOISE_PREFIX: &str = "noise_";

/// Generates a labelled multi-view dataset with planted informative features.
///
/// Instances are split into contiguous, balanced clusters. In every view the
/// informative features are the cluster center plus Gaussian noise, the noise
/// features are pure Gaussian noise. Columns are shuffled per view; feature
/// names record which columns are informative (see [`planted_informative`]).
pub fn generate_synthetic(params: &SyntheticParams) -> Result<MultiViewDataset> {
    let p = params;
    if p.clusters < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 clusters, got {}",
            p.clusters
        )));
    }
    if p.n < p.clusters || p.informative == 0 || p.noise == 0 || p.views < 2 {
        return Err(Error::InvalidParameter(
            "counts must be >= 1, n >= clusters and views >= 2".into(),
        ));
    }
    if !(p.noise_scale > 0.0 && p.noise_scale.is_finite() && p.separation >= 0.0) {
        return Err(Error::InvalidParameter(
            "noise_scale must be positive and separation non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let labels: Vec<usize> = (0..p.n).map(|i| i * p.clusters / p.n).collect();
    let dim = p.informative + p.noise;
    let mut views = Vec::with_capacity(p.views);
    for _ in 0..p.views {
        let centers = Array2::from_shape_simple_fn((p.clusters, p.informative), || {
            p.separation * rng.sample::<f64, _>(StandardNormal)
        });
        let mut order: Vec<usize> = (0..dim).collect();
        order.shuffle(&mut rng);
        let mut data = Array2::zeros((p.n, dim));
        for (i, &c) in labels.iter().enumerate() {
            for (src, &dst) in order.iter().enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                let center = if src < p.informative { centers[[c, src]] } else { 0.0 };
                data[[i, dst]] = center + p.noise_scale * eps;
            }
        }
        let mut names = vec![String::new(); dim];
        for (src, &dst) in order.iter().enumerate() {
            names[dst] = if src < p.informative {
                format!("{INFORMATIVE_PREFIX}{src}")
            } else {
                format!("{NOISE_PREFIX}{}", src - p.informative)
            };
        }
        views.push(ViewMatrix::new(data)?.with_feature_names(names)?);
    }
    MultiViewDataset::new(views, Some(labels))
}

/// Sorted column indices of the planted informative features of each view.
pub fn planted_informative(dataset: &MultiViewDataset) -> Vec<Vec<usize>> {
    dataset
        .views()
        .iter()
        .map(|view| {
            view.feature_names()
                .map(|names| {
                    names
                        .iter()
                        .enumerate()
                        .filter(|(_, n)| n.starts_with(INFORMATIVE_PREFIX))
                        .map(|(i, _)| i)
                        .collect()
                })
                .unwrap_or_default()
        })
        .collect()
}

/// Per-feature Fisher score: between-class scatter over within-class scatter.
pub fn fisher_scores(view: ArrayView2<'_, f64>, labels: &[usize]) -> Vec<f64> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    view.columns()
        .into_iter()
        .map(|col| {
            let mean = col.mean().unwrap_or(0.0);
            let mut sums = vec![0.0; k];
            for (&x, &l) in col.iter().zip(labels) {
                sums[l] += x;
            }
            let means: Vec<f64> = sums
                .iter()
                .zip(&counts)
                .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
                .collect();
            let between: f64 = means
                .iter()
                .zip(&counts)
                .map(|(m, &c)| c as f64 * (m - mean).powi(2))
                .sum();
            let within: f64 = col.iter().zip(labels).map(|(&x, &l)| (x - means[l]).powi(2)).sum();
            if within > 0.0 {
                between / within
            } else if between > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect()
}
