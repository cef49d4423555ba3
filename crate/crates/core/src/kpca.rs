//! Kernel PCA embeddings and out-of-sample projection.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::integration::{weighted_sum, WeightVector};
use crate::kernels::{eigendecompose, EigenSystem, KernelMatrix};

/// Samples embedded in the leading `p` kernel principal components.
///
/// Column `j` is `u_j * sqrt(λ_j)`, so its squared norm is `λ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub coordinates: DMatrix<f64>,
    pub explained_eigenvalues: Vec<f64>,
    pub sample_ids: Vec<String>,
    pub p: usize,
}

impl ProjectionResult {
    /// CSV `sample_id,pc1..pcp`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        let header: Vec<String> = (1..=self.p).map(|j| format!("pc{j}")).collect();
        writeln!(out, "sample_id,{}", header.join(",")).map_err(io_err)?;
        for (i, id) in self.sample_ids.iter().enumerate() {
            let row: Vec<String> = self.coordinates.row(i).iter().map(f64::to_string).collect();
            writeln!(out, "{id},{}", row.join(",")).map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Project the samples of a centered ensemble kernel onto its leading `p`
/// components.
pub fn project(ensemble: &KernelMatrix, p: usize) -> Result<ProjectionResult> {
    if !ensemble.is_centered() {
        return Err(Error::InvalidArgument("kernel PCA needs a centered kernel".into()));
    }
    let eig = eigendecompose(ensemble)?;
    project_with(&eig, ensemble.sample_ids().to_vec(), p)
}

/// Embedding from an existing eigensystem.
pub fn project_with(eig: &EigenSystem, sample_ids: Vec<String>, p: usize) -> Result<ProjectionResult> {
    check_rank(eig, p)?;
    let n = eig.n();
    let coordinates = DMatrix::from_fn(n, p, |i, j| eig.eigenvectors[(i, j)] * eig.eigenvalues[j].sqrt());
    Ok(ProjectionResult {
        coordinates,
        explained_eigenvalues: eig.eigenvalues[..p].to_vec(),
        sample_ids,
        p,
    })
}

fn check_rank(eig: &EigenSystem, p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::InvalidArgument("projection dimension must be positive".into()));
    }
    if p > eig.n() {
        return Err(Error::InvalidArgument(format!(
            "projection dimension {p} exceeds sample count {}",
            eig.n()
        )));
    }
    if let Some(index) = eig.eigenvalues[..p].iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroEigenvalue { index: index + 1 });
    }
    Ok(())
}

/// Embed a new sample given its kernel evaluations against the training
/// samples, one row per input kernel.
///
/// `train_kernels` are the uncentered training kernels, `train_eigs` the
/// eigensystem of the centered training ensemble built with `beta`.
pub fn project_out_of_sample(
    train_kernels: &[KernelMatrix],
    train_eigs: &EigenSystem,
    beta: &WeightVector,
    new_kernel_rows: &[Vec<f64>],
    p: usize,
) -> Result<Vec<f64>> {
    check_rank(train_eigs, p)?;
    if let Some(k) = train_kernels.iter().find(|k| k.is_centered()) {
        return Err(Error::InvalidArgument(format!(
            "out-of-sample projection needs the uncentered training kernel {}",
            k.view_name()
        )));
    }
    if new_kernel_rows.len() != train_kernels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} kernel rows for {} kernels",
            new_kernel_rows.len(),
            train_kernels.len()
        )));
    }
    let train = weighted_sum(train_kernels, beta)?;
    let n = train.nrows();
    if train_eigs.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigensystem of size {} for {n} training samples",
            train_eigs.n()
        )));
    }
    if let Some(row) = new_kernel_rows.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "kernel row of length {} for {n} training samples",
            row.len()
        )));
    }
    let nf = n as f64;
    let row: Vec<f64> = (0..n)
        .map(|i| new_kernel_rows.iter().zip(beta.weights()).map(|(r, w)| w * r[i]).sum())
        .collect();
    let train_means: Vec<f64> = (0..n).map(|j| train.column(j).sum() / nf).collect();
    let grand = train_means.iter().sum::<f64>() / nf;
    let row_mean = row.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = row
        .iter()
        .zip(&train_means)
        .map(|(k, m)| k - m - row_mean + grand)
        .collect();
    Ok((0..p)
        .map(|j| {
            let u = train_eigs.eigenvectors.column(j);
            let dot: f64 = u.iter().zip(&centered).map(|(a, b)| a * b).sum();
            dot / train_eigs.eigenvalues[j].sqrt()
        })
        .collect())
}
