//! Unsupervised feature selection for multi-view data.
//!
//! The pipeline fuses per-view kNN transition matrices into one graph by
//! regularized cross diffusion, then, for every view, searches for the feature
//! weights whose Gaussian kernel best aligns with the centered fused graph.
//! Weights are optimized over the unit box by a projected quasi-Newton method;
//! a sparsity weight is tuned per view to hit a requested feature budget.

pub mod affinity;
pub mod alignment;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod solver;

pub use affinity::{build_similarity, row_normalize, KnnOrientation, SimilarityMatrix, TransitionMatrix, Weighting};
pub use alignment::{AlignmentContext, AlignmentVariant, Bandwidth, Objective, SelectionVector};
pub use config::RunConfig;
pub use data::{MultiViewDataset, SyntheticParams, ViewMatrix};
pub use diffusion::{cross_diffuse, ComponentPurityReport, DiffusionConfig, FusedGraph};
pub use error::{Error, Result};
pub use pipeline::{select_features, select_features_with_graph, SelectionRequest, SelectionResult, SelectionSettings};
pub use solver::{pqn_minimize, SolverConfig, SolverOutcome, SolverStatus};
