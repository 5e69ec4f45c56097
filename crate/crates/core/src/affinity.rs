//! Per-view similarity matrices and row-stochastic transition matrices.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How pairwise similarities are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Weighting {
    /// `exp(-|x_i - x_j|^2 / sigma2)`.
    Gaussian { sigma2: f64 },
    /// `max(x_i . x_j, 0)`.
    DotProduct,
    /// Binary kNN weights; `orientation` says whether a point's neighbors are
    /// marked along its row or its column.
    ZeroOneKnn {
        k: usize,
        #[serde(default)]
        orientation: KnnOrientation,
    },
}

impl Weighting {
    /// Zero-one kNN weights with row `i` marking the neighbors of `x_i`.
    pub fn knn(k: usize) -> Self {
        Weighting::ZeroOneKnn {
            k,
            orientation: KnnOrientation::Row,
        }
    }
}

impl Default for Weighting {
    fn default() -> Self {
        Weighting::knn(5)
    }
}

/// Where the neighbors of a point are marked in a zero-one kNN matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KnnOrientation {
    /// `W_ij = 1` iff `x_j` is among the `k` nearest neighbors of `x_i`.
    /// Every row has exactly `k` ones.
    #[default]
    Row,
    /// `W_ij = 1` iff `x_i` is among the `k` nearest neighbors of `x_j`.
    /// Points that are nobody's neighbor get an all-zero row.
    Column,
}

/// Non-negative `n x n` similarity matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    w: Array2<f64>,
    weighting: Weighting,
}

impl SimilarityMatrix {
    /// Wraps a raw matrix, zeroing its diagonal.
    pub fn from_raw(mut w: Array2<f64>, weighting: Weighting) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::DimensionMismatch("similarity matrix must be square".into()));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "similarities must be finite and non-negative".into(),
            ));
        }
        w.diag_mut().fill(0.0);
        Ok(Self { w, weighting })
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }
}

/// Row-stochastic transition matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    p: Array2<f64>,
}

impl TransitionMatrix {
    /// Validates a matrix as row-stochastic (tolerance 1e-10) with zero diagonal.
    pub fn new(p: Array2<f64>) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::DimensionMismatch("transition matrix must be square".into()));
        }
        for (i, row) in p.rows().into_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidParameter(format!("row {i} has entries outside [0, 1]")));
            }
            if (row.sum() - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParameter(format!("row {i} does not sum to 1")));
            }
            if row[i] != 0.0 {
                return Err(Error::InvalidParameter(format!("row {i} has a nonzero diagonal")));
            }
        }
        Ok(Self { p })
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.p.view()
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }
}

fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Builds the similarity matrix of one view.
///
/// Rows are computed independently, so the result does not depend on the
/// number of worker threads.
pub fn build_similarity(view: ArrayView2<'_, f64>, weighting: Weighting) -> Result<SimilarityMatrix> {
    let n = view.nrows();
    let rows: Vec<Vec<f64>> = match weighting {
        Weighting::Gaussian { sigma2 } => {
            if !(sigma2 > 0.0 && sigma2.is_finite()) {
                return Err(Error::InvalidParameter(format!("sigma2 must be > 0, got {sigma2}")));
            }
            (0..n)
                .into_par_iter()
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            if i == j {
                                0.0
                            } else {
                                // Symmetric by construction: the distance loop is order-independent.
                                let (a, b) = if i < j { (i, j) } else { (j, i) };
                                (-squared_distance(view.row(a), view.row(b)) / sigma2).exp()
                            }
                        })
                        .collect()
                })
                .collect()
        }
        Weighting::DotProduct => (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            let (a, b) = if i < j { (i, j) } else { (j, i) };
                            view.row(a).dot(&view.row(b)).max(0.0)
                        }
                    })
                    .collect()
            })
            .collect(),
        Weighting::ZeroOneKnn { k, orientation } => {
            if k == 0 || k >= n {
                return Err(Error::InvalidParameter(format!(
                    "k must satisfy 1 <= k < n = {n}, got {k}"
                )));
            }
            let neighbors: Vec<Vec<usize>> = (0..n).into_par_iter().map(|a| nearest_neighbors(view, a, k)).collect();
            let mut w = vec![vec![0.0; n]; n];
            for (a, nn) in neighbors.iter().enumerate() {
                for &b in nn {
                    match orientation {
                        KnnOrientation::Row => w[a][b] = 1.0,
                        KnnOrientation::Column => w[b][a] = 1.0,
                    }
                }
            }
            w
        }
    };
    let w = Array2::from_shape_vec((n, n), rows.into_iter().flatten().collect()).expect("n rows of length n");
    SimilarityMatrix::from_raw(w, weighting)
}

/// Indices of the `k` nearest rows to row `j` (excluding `j`), ties broken by lower index.
pub fn nearest_neighbors(view: ArrayView2<'_, f64>, j: usize, k: usize) -> Vec<usize> {
    let mut dist: Vec<(f64, usize)> = (0..view.nrows())
        .filter(|&i| i != j)
        .map(|i| (squared_distance(view.row(i), view.row(j)), i))
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dist.truncate(k);
    dist.into_iter().map(|(_, i)| i).collect()
}

/// Rows that had zero total similarity and received the uniform fallback.
pub type FallbackRows = Vec<usize>;

/// Normalizes each row of `w` to sum to one.
///
/// A row with zero sum becomes uniform over its off-diagonal entries.
pub fn row_normalize(w: &SimilarityMatrix) -> (TransitionMatrix, FallbackRows) {
    let n = w.w.nrows();
    let mut p = w.w.clone();
    let mut fallback = Vec::new();
    for (i, mut row) in p.rows_mut().into_iter().enumerate() {
        let total = row.sum();
        if total > 0.0 {
            row.mapv_inplace(|v| v / total);
        } else if n > 1 {
            row.fill(1.0 / (n - 1) as f64);
            fallback.push(i);
        }
        row[i] = 0.0;
    }
    if !fallback.is_empty() {
        log::warn!(
            "{} zero-similarity rows replaced by a uniform distribution",
            fallback.len()
        );
    }
    (TransitionMatrix { p }, fallback)
}

/// Connected components of the undirected nonzero pattern of `m`, each sorted,
/// listed by smallest member.
pub fn connected_components(m: ArrayView2<'_, f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for ((i, j), v) in m.indexed_iter() {
        if *v != 0.0 && i != j {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut comps: Vec<Vec<usize>> = groups.into_values().collect();
    comps.sort_by_key(|c| c[0]);
    comps
}
