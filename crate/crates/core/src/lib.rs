//! Multiple-kernel PCA for multi-view data integration.
//!
//! Each view of the samples becomes a centered Gaussian kernel. Kernels are
//! combined on the weight simplex with weights chosen by a variance-gain
//! score, the ensemble is embedded with kernel PCA, the embedding is
//! clustered with k-means (silhouette-selected k) and the clusters are
//! compared with a multi-group log-rank test.

pub mod clustering;
pub mod data;
pub mod error;
pub mod integration;
pub mod kernels;
pub mod kpca;
pub mod pipeline;
pub mod survival;
pub mod synthetic;

pub use clustering::{kmeans, select_k, silhouette_width, Clustering, KSelection};
pub use data::{align_samples, load_matrix, load_survival, DataMatrix, SurvivalRecord};
pub use error::{Error, ErrorKind, Result};
pub use integration::{
    combine, enumerate_simplex_grid, gain, optimize_weights, score, select_dimension, DimensionSelection, ScoreCurve,
    ScorePoint, WeightVector,
};
pub use kernels::{center_kernel, default_gamma, eigendecompose, gaussian_kernel, EigenSystem, KernelMatrix};
pub use kpca::{project, project_out_of_sample, ProjectionResult};
pub use pipeline::{compare_modes, run_pipeline, ComparisonRow, Mode, RunConfig, RunReport};
pub use survival::{chi_square_sf, kaplan_meier, logrank_test, LogRankResult};
