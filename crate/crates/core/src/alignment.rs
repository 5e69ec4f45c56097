//! Selected-feature RBF kernel, matrix centering, alignment scores and the
//! relaxed selection objective with its analytic gradient.
//!
//! For a view `X` (`n x D`), selection weights `s` in `[0, 1]^D` and a
//! centered target graph `C = H G H`, the objective is
//!
//! ```text
//! f(s) = -sum_ij C_ij K_ij(s) + lambda * sum_p s_p
//! K_ij(s) = exp(-sum_p s_p^2 (x_ip - x_jp)^2 / sigma2)
//! ```
//!
//! and its gradient is
//!
//! ```text
//! df/ds_p = (2 s_p / sigma2) * sum_ij C_ij K_ij (x_ip - x_jp)^2 + lambda
//! ```

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relaxed per-view feature indicator with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionVector {
    values: Array1<f64>,
    view_index: usize,
}

impl SelectionVector {
    pub fn new(values: Array1<f64>, view_index: usize) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!(
                "selection weights must lie in [0, 1], found {bad}"
            )));
        }
        Ok(Self { values, view_index })
    }

    pub fn ones(dim: usize, view_index: usize) -> Self {
        Self {
            values: Array1::ones(dim),
            view_index,
        }
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn view_index(&self) -> usize {
        self.view_index
    }

    pub fn into_values(self) -> Array1<f64> {
        self.values
    }
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("sigma2 must be > 0, got {sigma2}")))
    }
}

#[inline]
fn weighted_sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, s: ArrayView1<'_, f64>) -> f64 {
    let mut d = 0.0;
    for ((x, y), w) in a.iter().zip(b).zip(s) {
        let t = w * (x - y);
        d += t * t;
    }
    d
}

/// Gaussian kernel on the feature-weighted view `X diag(s)`.
pub fn rbf_kernel(view: ArrayView2<'_, f64>, s: ArrayView1<'_, f64>, sigma2: f64) -> Result<Array2<f64>> {
    check_sigma2(sigma2)?;
    if s.len() != view.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} selection weights for {} features",
            s.len(),
            view.ncols()
        )));
    }
    let n = view.nrows();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| (-weighted_sq_dist(view.row(i), view.row(j), s) / sigma2).exp())
                .collect()
        })
        .collect();
    let mut k = Array2::eye(n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "rbf kernel".into(),
        });
    }
    Ok(k)
}

/// Double centering `H M H` with `H = I - 11^T / n`, without forming `H`.
pub fn center(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = m.nrows() as f64;
    let row_means = m.sum_axis(ndarray::Axis(1)) / n;
    let col_means = m.sum_axis(ndarray::Axis(0)) / n;
    let grand = row_means.sum() / n;
    let mut out = m.to_owned();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = *v - row_means[i] - col_means[j] + grand;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentVariant {
    /// `Tr(K1 K2) / (|K1|_F |K2|_F)`.
    Normalized,
    /// `Tr(K1 K2)`.
    Unnormalized,
    /// `Tr(H K1 H K2)`.
    Centered,
}

/// `Tr(A B)` for symmetric `A`, `B`, computed as the entrywise inner product.
fn trace_product(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.t().iter()).map(|(x, y)| x * y).sum()
}

pub fn alignment_score(k1: ArrayView2<'_, f64>, k2: ArrayView2<'_, f64>, variant: AlignmentVariant) -> Result<f64> {
    if k1.dim() != k2.dim() || !k1.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "alignment needs two equal square matrices, got {:?} and {:?}",
            k1.dim(),
            k2.dim()
        )));
    }
    match variant {
        AlignmentVariant::Unnormalized => Ok(trace_product(k1, k2)),
        AlignmentVariant::Centered => Ok(trace_product(center(k1).view(), k2)),
        AlignmentVariant::Normalized => {
            let n1 = k1.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n2 = k2.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n1 == 0.0 || n2 == 0.0 {
                return Err(Error::Undefined("normalized alignment with a zero matrix".into()));
            }
            Ok(trace_product(k1, k2) / (n1 * n2))
        }
    }
}

/// Kernel bandwidth choice for the selection objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Bandwidth {
    Fixed {
        sigma2: f64,
    },
    /// Square of the median pairwise Euclidean distance.
    MedianHeuristic,
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Fixed { sigma2: 1.0 }
    }
}

impl Bandwidth {
    pub fn resolve(&self, view: ArrayView2<'_, f64>) -> Result<f64> {
        let sigma2 = match *self {
            Bandwidth::Fixed { sigma2 } => sigma2,
            Bandwidth::MedianHeuristic => median_heuristic_sigma2(view),
        };
        check_sigma2(sigma2)?;
        Ok(sigma2)
    }
}

pub fn median_heuristic_sigma2(view: ArrayView2<'_, f64>) -> f64 {
    let n = view.nrows();
    let ones = Array1::ones(view.ncols());
    let mut d: Vec<f64> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| weighted_sq_dist(view.row(i), view.row(j), ones.view()))
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    // Median of squared distances equals the squared median distance.
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        let (a, b) = (d[mid - 1].sqrt(), d[mid].sqrt());
        ((a + b) / 2.0).powi(2)
    }
}

/// Differentiable objective over a box, as seen by the solver.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, s: ArrayView1<'_, f64>) -> f64;
    fn value_and_gradient(&self, s: ArrayView1<'_, f64>) -> (f64, Array1<f64>);
}

/// Everything the selection objective needs for one view.
#[derive(Debug, Clone)]
pub struct AlignmentContext<'a> {
    g_centered: ArrayView2<'a, f64>,
    view: ArrayView2<'a, f64>,
    sigma2: f64,
    lambda: f64,
}

/// Rows per work unit in the pairwise sums. Fixed so results do not depend on
/// the thread count.
const ROW_BLOCK: usize = 16;

impl<'a> AlignmentContext<'a> {
    /// `g_centered` must already be double-centered (see [`center`]).
    pub fn new(g_centered: ArrayView2<'a, f64>, view: ArrayView2<'a, f64>, sigma2: f64, lambda: f64) -> Result<Self> {
        check_sigma2(sigma2)?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        let n = view.nrows();
        if g_centered.dim() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "graph is {:?} but the view has {n} rows",
                g_centered.dim()
            )));
        }
        let scale = g_centered.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-8 * scale * (n.max(1) as f64);
        let row_ok = g_centered.rows().into_iter().all(|r| r.sum().abs() <= tol);
        let col_ok = g_centered.columns().into_iter().all(|c| c.sum().abs() <= tol);
        if !(row_ok && col_ok) {
            return Err(Error::InvalidParameter("graph is not centered".into()));
        }
        Ok(Self {
            g_centered,
            view,
            sigma2,
            lambda,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.g_centered, self.view, self.sigma2, lambda)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn view(&self) -> ArrayView2<'a, f64> {
        self.view
    }

    pub fn g_centered(&self) -> ArrayView2<'a, f64> {
        self.g_centered
    }

    pub fn n_features(&self) -> usize {
        self.view.ncols()
    }

    /// Returns `sum_ij C_ij K_ij` and, if requested, the per-feature sums
    /// `sum_ij C_ij K_ij (x_ip - x_jp)^2`, in one pass over instance pairs.
    fn pair_sums(&self, s: ArrayView1<'_, f64>, with_gradient: bool) -> (f64, Array1<f64>) {
        let n = self.view.nrows();
        let d = self.view.ncols();
        let blocks: Vec<(f64, Array1<f64>)> = (0..n.div_ceil(ROW_BLOCK))
            .into_par_iter()
            .map(|b| {
                let mut total = 0.0;
                let mut acc = Array1::zeros(if with_gradient { d } else { 0 });
                for i in (b * ROW_BLOCK)..((b + 1) * ROW_BLOCK).min(n) {
                    let xi = self.view.row(i);
                    total += self.g_centered[[i, i]];
                    for j in (i + 1)..n {
                        let xj = self.view.row(j);
                        let k = (-weighted_sq_dist(xi, xj, s) / self.sigma2).exp();
                        let m = 2.0 * self.g_centered[[i, j]] * k;
                        total += m;
                        if with_gradient && m != 0.0 {
                            for ((a, x), y) in acc.iter_mut().zip(xi).zip(xj) {
                                let diff = x - y;
                                *a += m * diff * diff;
                            }
                        }
                    }
                }
                (total, acc)
            })
            .collect();
        let mut total = 0.0;
        let mut acc = Array1::zeros(if with_gradient { d } else { 0 });
        for (t, a) in blocks {
            total += t;
            if with_gradient {
                acc += &a;
            }
        }
        (total, acc)
    }

    pub fn objective(&self, s: &SelectionVector) -> f64 {
        self.value(s.values())
    }

    pub fn gradient(&self, s: &SelectionVector) -> Array1<f64> {
        self.value_and_gradient(s.values()).1
    }

    /// Change of the alignment term when feature `p` alone is switched, for
    /// every `p`: `s_p` goes to 1 if it is below 1/2, to 0 otherwise.
    pub fn toggle_deltas(&self, s: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.view.nrows();
        // Switching p rescales every K_ij by exp(-shift_p (x_ip - x_jp)^2).
        let shift: Array1<f64> = s.mapv(|v| {
            let target = if v < 0.5 { 1.0 } else { 0.0 };
            (target * target - v * v) / self.sigma2
        });
        let blocks: Vec<Array1<f64>> = (0..n.div_ceil(ROW_BLOCK))
            .into_par_iter()
            .map(|b| {
                let mut acc = Array1::zeros(s.len());
                for i in (b * ROW_BLOCK)..((b + 1) * ROW_BLOCK).min(n) {
                    let xi = self.view.row(i);
                    for j in (i + 1)..n {
                        let xj = self.view.row(j);
                        let k = (-weighted_sq_dist(xi, xj, s) / self.sigma2).exp();
                        let m = 2.0 * self.g_centered[[i, j]] * k;
                        if m == 0.0 {
                            continue;
                        }
                        for (((a, x), y), c) in acc.iter_mut().zip(xi).zip(xj).zip(&shift) {
                            let diff = x - y;
                            *a += m * (1.0 - (-c * diff * diff).exp());
                        }
                    }
                }
                acc
            })
            .collect();
        let mut acc = Array1::zeros(s.len());
        for a in blocks {
            acc += &a;
        }
        acc
    }

    /// Gradient of the alignment term alone (without the `lambda` offset).
    pub fn data_gradient(&self, s: ArrayView1<'_, f64>) -> Array1<f64> {
        let (_, sums) = self.pair_sums(s, true);
        let scale = 2.0 / self.sigma2;
        Array1::from_iter(sums.iter().zip(s).map(|(v, sp)| scale * sp * v))
    }
}

impl Objective for AlignmentContext<'_> {
    fn dim(&self) -> usize {
        self.view.ncols()
    }

    fn value(&self, s: ArrayView1<'_, f64>) -> f64 {
        let (total, _) = self.pair_sums(s, false);
        -total + self.lambda * s.sum()
    }

    fn value_and_gradient(&self, s: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
        let (total, sums) = self.pair_sums(s, true);
        let scale = 2.0 / self.sigma2;
        let grad = Array1::from_iter(sums.iter().zip(s).map(|(v, sp)| scale * sp * v + self.lambda));
        (-total + self.lambda * s.sum(), grad)
    }
}
