//! Clustering-based assessment of selected features.
//!
//! Restricted views are clustered with k-means over several seeded repeats;
//! accuracy (optimal cluster-to-class matching) and NMI are averaged over the
//! repeats. A second evaluator clusters a spectral embedding of the fused graph.

pub mod kmeans;
pub mod metrics;

use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
pub use kmeans::{kmeans, ClusterAssignment, KMeansRuns};
pub use metrics::{clustering_accuracy, nmi};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Stack the restricted views column-wise and cluster once.
    #[default]
    Concatenated,
    /// Cluster every restricted view on its own.
    PerView,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub accuracy: f64,
    pub nmi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub accuracy: MeanStd,
    pub nmi: MeanStd,
    pub repeats: usize,
    pub runs: Vec<RunMetrics>,
}

/// Clusters `data` `repeats` times and scores every run against `labels`.
pub fn evaluate_matrix(
    label: impl Into<String>,
    data: ArrayView2<'_, f64>,
    labels: &[usize],
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if data.ncols() == 0 {
        return Err(Error::InvalidParameter("empty feature selection".into()));
    }
    let fits = kmeans(data, k, repeats, seed)?;
    let runs = fits
        .runs
        .iter()
        .map(|run| {
            Ok(RunMetrics {
                accuracy: clustering_accuracy(&run.labels, labels)?,
                nmi: nmi(&run.labels, labels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let nmis: Vec<f64> = runs.iter().map(|r| r.nmi).collect();
    Ok(MetricsReport {
        label: label.into(),
        accuracy: MeanStd::of(&acc),
        nmi: MeanStd::of(&nmis),
        repeats,
        runs,
    })
}

/// Every column index of every view.
pub fn all_features(dataset: &MultiViewDataset) -> Vec<Vec<usize>> {
    dataset.views().iter().map(|v| (0..v.n_features()).collect()).collect()
}

/// Scores a per-view feature selection by k-means clustering.
///
/// Concatenated mode yields one report labelled `label`; per-view mode yields
/// one report per view, labelled `label/view<v>`.
pub fn evaluate_selection(
    dataset: &MultiViewDataset,
    selected: &[Vec<usize>],
    label: &str,
    k: usize,
    repeats: usize,
    seed: u64,
    mode: EvalMode,
) -> Result<Vec<MetricsReport>> {
    let labels = dataset.labels().ok_or(Error::MissingLabels)?;
    if selected.len() != dataset.n_views() {
        return Err(Error::DimensionMismatch(format!(
            "selection covers {} views, dataset has {}",
            selected.len(),
            dataset.n_views()
        )));
    }
    let restricted = dataset
        .views()
        .iter()
        .zip(selected)
        .map(|(view, cols)| view.select_columns(cols).map(|v| v.data().to_owned()))
        .collect::<Result<Vec<Array2<f64>>>>()?;
    match mode {
        EvalMode::Concatenated => {
            let parts: Vec<ArrayView2<'_, f64>> = restricted.iter().map(|m| m.view()).collect();
            let stacked = concatenate(Axis(1), &parts).expect("views share the row count");
            Ok(vec![evaluate_matrix(label, stacked.view(), labels, k, repeats, seed)?])
        }
        EvalMode::PerView => restricted
            .iter()
            .enumerate()
            .map(|(v, m)| evaluate_matrix(format!("{label}/view{v}"), m.view(), labels, k, repeats, seed))
            .collect(),
    }
}

/// Rows of the top `dims` eigenvectors of `D^-1/2 G D^-1/2`, each scaled to
/// unit length.
pub fn spectral_embedding(g: ArrayView2<'_, f64>, dims: usize) -> Result<Array2<f64>> {
    let n = g.nrows();
    if dims == 0 || dims > n {
        return Err(Error::InvalidParameter(format!("embedding size must lie in 1..={n}")));
    }
    let inv_sqrt: Vec<f64> = g
        .rows()
        .into_iter()
        .map(|r| {
            let d = r.sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let a = nalgebra::DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * g[[i, j]] * inv_sqrt[j]);
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let mut emb = Array2::from_shape_fn((n, dims), |(i, c)| eig.eigenvectors[(i, order[c])]);
    for mut row in emb.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    Ok(emb)
}

/// Clusters the spectral embedding of a fused graph.
pub fn evaluate_graph(
    g: ArrayView2<'_, f64>,
    labels: &[usize],
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let emb = spectral_embedding(g, k)?;
    evaluate_matrix("fused-graph-spectral", emb.view(), labels, k, repeats, seed)
}

/// One row per report: `label,accuracy_mean,accuracy_std,nmi_mean,nmi_std,repeats`.
pub fn write_metrics_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "label,accuracy_mean,accuracy_std,nmi_mean,nmi_std,repeats").map_err(io)?;
    for r in reports {
        writeln!(
            f,
            "{},{:.4},{:.4},{:.4},{:.4},{}",
            r.label, r.accuracy.mean, r.accuracy.std, r.nmi.mean, r.nmi.std, r.repeats
        )
        .map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, normalize_unit_length, planted_informative, SyntheticParams};

    #[test]
    fn single_repeat_has_zero_spread() {
        let ds = generate_synthetic(&SyntheticParams::default()).unwrap();
        let all = all_features(&ds);
        let r = evaluate_selection(&ds, &all, "all", 3, 1, 5, EvalMode::Concatenated).unwrap();
        assert_eq!(r[0].accuracy.std, 0.0);
        assert_eq!(r[0].runs.len(), 1);
    }

    #[test]
    fn all_features_separate_synthetic_clusters() {
        let ds = generate_synthetic(&SyntheticParams::default()).unwrap();
        let (ds, _) = normalize_unit_length(&ds);
        let r = evaluate_selection(&ds, &all_features(&ds), "all", 3, 20, 5, EvalMode::Concatenated).unwrap();
        assert!(r[0].accuracy.mean >= 0.95, "{:?}", r[0].accuracy);
    }

    #[test]
    fn noise_features_score_near_chance() {
        let ds = generate_synthetic(&SyntheticParams::default()).unwrap();
        let planted = planted_informative(&ds);
        let noise: Vec<Vec<usize>> = ds
            .views()
            .iter()
            .zip(&planted)
            .map(|(v, inf)| (0..v.n_features()).filter(|p| !inf.contains(p)).collect())
            .collect();
        let r = evaluate_selection(&ds, &noise, "noise", 3, 20, 5, EvalMode::PerView).unwrap();
        assert_eq!(r.len(), 2);
        for report in r {
            assert!(
                (report.accuracy.mean - 1.0 / 3.0).abs() <= 0.15,
                "{:?}",
                report.accuracy
            );
        }
    }

    #[test]
    fn missing_labels_and_empty_selection() {
        let ds = generate_synthetic(&SyntheticParams::default()).unwrap();
        let unlabeled = MultiViewDataset::new(ds.views().to_vec(), None).unwrap();
        assert!(matches!(
            evaluate_selection(&unlabeled, &all_features(&ds), "x", 3, 1, 0, EvalMode::Concatenated),
            Err(Error::MissingLabels)
        ));
        assert!(evaluate_selection(&ds, &[vec![], vec![]], "x", 3, 1, 0, EvalMode::PerView).is_err());
    }

    #[test]
    fn spectral_embedding_of_block_graph() {
        let mut g = Array2::<f64>::zeros((6, 6));
        for &(i, j) in &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)] {
            g[[i, j]] = 1.0;
            g[[j, i]] = 1.0;
        }
        let r = evaluate_graph(g.view(), &[0, 0, 0, 1, 1, 1], 2, 5, 3).unwrap();
        assert_eq!(r.accuracy.mean, 1.0);
    }
}
