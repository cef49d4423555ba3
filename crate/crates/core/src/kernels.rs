//! Gaussian kernel matrices, double centering and eigendecomposition.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::data::DataMatrix;
use crate::error::{Error, Result};

/// Relative PSD tolerance on the smallest eigenvalue.
pub const PSD_TOLERANCE: f64 = 1e-8;
/// Eigenvalues below this fraction of the largest are reported as zero.
pub const ZERO_EIGENVALUE_RATIO: f64 = 1e-10;
/// Absolute floor added to both thresholds so that matrices which are zero
/// up to rounding are not rejected.
const ABSOLUTE_FLOOR: f64 = 1e-12;

/// Symmetric N×N similarity matrix over an ordered sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: DMatrix<f64>,
    centered: bool,
    view_name: String,
    sample_ids: Vec<String>,
}

impl KernelMatrix {
    /// Wrap a square matrix, symmetrizing it as `(K + Kᵀ)/2`.
    pub fn from_values(
        view_name: impl Into<String>,
        sample_ids: Vec<String>,
        values: DMatrix<f64>,
        centered: bool,
    ) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "kernel must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if sample_ids.len() != values.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} sample ids for a {}x{} kernel",
                sample_ids.len(),
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel matrix entry".into()));
        }
        let values = (&values + values.transpose()) * 0.5;
        Ok(Self {
            values,
            centered,
            view_name: view_name.into(),
            sample_ids,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn view_name(&self) -> &str {
        &self.view_name
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.values.trace()
    }

    /// Dump as CSV with sample ids as header row and first column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        write!(out, "sample_id").map_err(io_err)?;
        for id in &self.sample_ids {
            write!(out, ",{id}").map_err(io_err)?;
        }
        writeln!(out).map_err(io_err)?;
        for (i, id) in self.sample_ids.iter().enumerate() {
            write!(out, "{id}").map_err(io_err)?;
            for j in 0..self.n() {
                write!(out, ",{}", self.values[(i, j)]).map_err(io_err)?;
            }
            writeln!(out).map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Rule-of-thumb Gaussian width `1 / (2 d²)` for `d` features.
pub fn default_gamma(d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidArgument("feature count must be positive".into()));
    }
    let d = d as f64;
    Ok(1.0 / (2.0 * d * d))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")))
    }
}

/// `exp(-γ ‖x - y‖²)` between two feature rows.
pub fn gaussian(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * sq).exp()
}

/// Uncentered Gaussian kernel over the rows of `x`.
pub fn gaussian_kernel(x: &DataMatrix, gamma: f64) -> Result<KernelMatrix> {
    check_gamma(gamma)?;
    let values = x.values();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("view {}", x.view_name())));
    }
    let n = x.n_samples();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| values.row(i).iter().copied().collect()).collect();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| gaussian(&rows[i], &rows[j], gamma)).collect())
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (offset, &v) in row.iter().enumerate() {
            let j = i + offset;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    for i in 0..n {
        k[(i, i)] = 1.0;
    }
    KernelMatrix::from_values(x.view_name(), x.sample_ids().to_vec(), k, false)
}

/// Kernel evaluations of one new feature row against every training row.
pub fn gaussian_kernel_row(train: &DataMatrix, x_new: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    if x_new.len() != train.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "new sample has {} features, view {} has {}",
            x_new.len(),
            train.view_name(),
            train.n_features()
        )));
    }
    if x_new.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("new sample".into()));
    }
    let values = train.values();
    Ok((0..train.n_samples())
        .map(|i| {
            let row: Vec<f64> = values.row(i).iter().copied().collect();
            gaussian(&row, x_new, gamma)
        })
        .collect())
}

/// Double centering `HKH` with `H = I - 11ᵀ/N`.
pub fn center_kernel(k: &KernelMatrix) -> KernelMatrix {
    let values = k.values();
    let n = values.nrows();
    let nf = n as f64;
    let col_means: Vec<f64> = (0..n).map(|j| values.column(j).sum() / nf).collect();
    let grand = col_means.iter().sum::<f64>() / nf;
    // K is symmetric, so row means equal column means.
    let centered = DMatrix::from_fn(n, n, |i, j| values[(i, j)] - col_means[i] - col_means[j] + grand);
    let centered = (&centered + centered.transpose()) * 0.5;
    KernelMatrix {
        values: centered,
        centered: true,
        view_name: k.view_name.clone(),
        sample_ids: k.sample_ids.clone(),
    }
}

/// Descending eigenpairs of a symmetric kernel with orthonormal eigenvector
/// columns. Each eigenvector is oriented so that its largest-magnitude entry
/// is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Number of eigenvalues that are strictly positive after clamping.
    pub fn positive_count(&self) -> usize {
        self.eigenvalues.iter().take_while(|&&v| v > 0.0).count()
    }

    /// Sum of the leading `p` eigenvalues.
    pub fn leading_sum(&self, p: usize) -> f64 {
        self.eigenvalues.iter().take(p).sum()
    }
}

fn clamp_spectrum(values: &mut [f64]) -> Result<()> {
    let largest = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let smallest = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !largest.is_finite() || !smallest.is_finite() {
        return Err(Error::NonFinite("eigenvalue".into()));
    }
    let scale = largest.max(0.0);
    if smallest < -(PSD_TOLERANCE * scale + ABSOLUTE_FLOOR) {
        return Err(Error::NotPsd { smallest, largest });
    }
    let zero_below = ZERO_EIGENVALUE_RATIO * scale + ABSOLUTE_FLOOR;
    for v in values.iter_mut() {
        if *v < zero_below {
            *v = 0.0;
        }
    }
    Ok(())
}

fn check_finite(k: &KernelMatrix) -> Result<()> {
    if k.values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("kernel {}", k.view_name)))
    }
}

/// Full eigendecomposition, eigenvalues descending and clamped at zero.
pub fn eigendecompose(k: &KernelMatrix) -> Result<EigenSystem> {
    check_finite(k)?;
    let n = k.n();
    let eig = SymmetricEigen::new(k.values.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    clamp_spectrum(&mut eigenvalues)?;

    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(EigenSystem {
        eigenvalues,
        eigenvectors,
    })
}

/// Descending, clamped eigenvalues without eigenvectors.
pub fn eigenvalues(k: &KernelMatrix) -> Result<Vec<f64>> {
    check_finite(k)?;
    let mut values: Vec<f64> = k.values.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    clamp_spectrum(&mut values)?;
    Ok(values)
}
