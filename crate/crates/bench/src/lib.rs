//! Shared inputs for the benchmarks.

use cdmafs::alignment::center;
use cdmafs::data::{generate_synthetic, normalize_unit_length, MultiViewDataset, SyntheticParams};
use cdmafs::pipeline::{fuse, SelectionSettings};
use cdmafs::TransitionMatrix;
use ndarray::Array2;

/// Normalized planted-cluster data with `n` instances and `dim` features per view.
pub fn dataset(n: usize, dim: usize) -> MultiViewDataset {
    let ds = generate_synthetic(&SyntheticParams {
        n,
        informative: 10,
        noise: dim - 10,
        ..Default::default()
    })
    .expect("valid generator parameters");
    normalize_unit_length(&ds).0
}

/// Per-view transitions and the centered fused graph of [`dataset`].
pub struct Fixture {
    pub dataset: MultiViewDataset,
    pub transitions: Vec<TransitionMatrix>,
    pub g_centered: Array2<f64>,
}

pub fn fixture(n: usize, dim: usize) -> Fixture {
    let settings = SelectionSettings {
        normalize: false,
        ..Default::default()
    };
    let dataset = dataset(n, dim);
    let fusion = fuse(&dataset, &settings).expect("fusion succeeds");
    Fixture {
        g_centered: center(fusion.graph.g.view()),
        transitions: fusion.transitions,
        dataset,
    }
}
