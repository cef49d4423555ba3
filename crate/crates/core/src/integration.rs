//! Ensemble kernels on the weight simplex and the variance-gain score used
//! to pick kernel weights and the projection dimension.
//!
//! For an ensemble `K = Σ β_m K_m` of centered kernels the per-dimension
//! gain is
//!
//! ```text
//! g_i = exp( λ_i(K) / max(λ_i(K_1), ..., λ_i(K_M), 1) - 1 )
//! ```
//!
//! and the score of a `p`-dimensional projection is the mean of `g_1..g_p`.
//! A gain above the best single-kernel baseline grows exponentially while a
//! loss is bounded below by `exp(-1)`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, EigenSystem, KernelMatrix};

/// Maximum deviation of `Σ β` from one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;
/// Relative margin a grid point must beat the incumbent by to replace it.
/// Points within this margin count as ties and the earlier (lexicographically
/// smaller) weight vector is kept.
pub const TIE_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_GRID_STEP: f64 = 0.05;
pub const DEFAULT_P_MAX: usize = 10;

/// Nonnegative kernel weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("weight vector is empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weights must be finite and nonnegative: {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidArgument(format!("weights must sum to 1, got {total}")));
        }
        Ok(Self(weights))
    }

    /// Equal weight `1/m` on every kernel.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("weight vector is empty".into()));
        }
        Self::new(vec![1.0 / m as f64; m])
    }

    /// All weight on kernel `index`.
    pub fn vertex(m: usize, index: usize) -> Result<Self> {
        if index >= m {
            return Err(Error::InvalidArgument(format!("vertex {index} of {m}")));
        }
        let mut w = vec![0.0; m];
        w[index] = 1.0;
        Self::new(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_vertex(&self) -> bool {
        self.0.contains(&1.0)
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

fn check_compatible(kernels: &[KernelMatrix], beta: &WeightVector) -> Result<()> {
    let Some(first) = kernels.first() else {
        return Err(Error::InvalidArgument("no kernels to combine".into()));
    };
    if beta.len() != kernels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} kernels",
            beta.len(),
            kernels.len()
        )));
    }
    for k in &kernels[1..] {
        if k.n() != first.n() {
            return Err(Error::DimensionMismatch(format!(
                "kernel {} is {}x{}, kernel {} is {}x{}",
                k.view_name(),
                k.n(),
                k.n(),
                first.view_name(),
                first.n(),
                first.n()
            )));
        }
        if k.sample_ids() != first.sample_ids() {
            return Err(Error::DimensionMismatch(format!(
                "kernels {} and {} have different sample order",
                first.view_name(),
                k.view_name()
            )));
        }
    }
    Ok(())
}

/// `Σ β_m K_m` without any requirement on centering.
pub(crate) fn weighted_sum(kernels: &[KernelMatrix], beta: &WeightVector) -> Result<nalgebra::DMatrix<f64>> {
    check_compatible(kernels, beta)?;
    let mut acc = kernels[0].values() * beta.weights()[0];
    for (k, &w) in kernels.iter().zip(beta.weights()).skip(1) {
        acc += k.values() * w;
    }
    Ok(acc)
}

/// Ensemble `Σ β_m K_m` of centered kernels.
pub fn combine(kernels: &[KernelMatrix], beta: &WeightVector) -> Result<KernelMatrix> {
    if let Some(k) = kernels.iter().find(|k| !k.is_centered()) {
        return Err(Error::InvalidArgument(format!(
            "kernel {} must be centered before combining",
            k.view_name()
        )));
    }
    let values = weighted_sum(kernels, beta)?;
    KernelMatrix::from_values("ensemble", kernels[0].sample_ids().to_vec(), values, true)
}

/// Gain of the ensemble in one dimension against the best single view.
pub fn gain(ensemble_eig: f64, input_eigs: &[f64]) -> Result<f64> {
    if ensemble_eig.is_nan() || ensemble_eig < 0.0 || input_eigs.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eigenvalues must be nonnegative: {ensemble_eig}, {input_eigs:?}"
        )));
    }
    let baseline = input_eigs.iter().copied().fold(1.0, f64::max);
    Ok((ensemble_eig / baseline - 1.0).exp())
}

fn check_p(p: usize, n: usize) -> Result<()> {
    if p == 0 || p > n {
        return Err(Error::InvalidArgument(format!(
            "projection dimension must be in 1..={n}, got {p}"
        )));
    }
    Ok(())
}

/// Per-dimension gains for dimensions `1..=p` from descending spectra.
pub fn gains_from_spectra(ensemble: &[f64], inputs: &[&[f64]], p: usize) -> Result<Vec<f64>> {
    let n = inputs.iter().map(|s| s.len()).fold(ensemble.len(), usize::min);
    check_p(p, n)?;
    let mut column = Vec::with_capacity(inputs.len());
    (0..p)
        .map(|i| {
            column.clear();
            column.extend(inputs.iter().map(|s| s[i]));
            gain(ensemble[i], &column)
        })
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean gain over the leading `p` dimensions.
pub fn score(ensemble: &EigenSystem, inputs: &[EigenSystem], p: usize) -> Result<f64> {
    let spectra: Vec<&[f64]> = inputs.iter().map(|e| e.eigenvalues.as_slice()).collect();
    Ok(mean(&gains_from_spectra(&ensemble.eigenvalues, &spectra, p)?))
}

/// All weight vectors on the simplex whose entries are multiples of `step`,
/// in ascending lexicographic order.
pub fn enumerate_simplex_grid(m: usize, step: f64) -> Result<Vec<WeightVector>> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one kernel".into()));
    }
    let divisions = grid_divisions(step)?;
    let mut out = Vec::new();
    let mut parts = vec![0usize; m];
    compositions(&mut parts, 0, divisions, &mut |parts| {
        let w = parts.iter().map(|&c| c as f64 / divisions as f64).collect();
        out.push(WeightVector(w));
    });
    Ok(out)
}

fn grid_divisions(step: f64) -> Result<usize> {
    if !(step.is_finite() && step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "grid step must be in (0, 1], got {step}"
        )));
    }
    let s = (1.0 / step).round();
    if (s * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "grid step must be the reciprocal of an integer, got {step}"
        )));
    }
    Ok(s as usize)
}

fn compositions(parts: &mut [usize], at: usize, remaining: usize, emit: &mut impl FnMut(&[usize])) {
    if at == parts.len() - 1 {
        parts[at] = remaining;
        emit(parts);
        return;
    }
    for c in 0..=remaining {
        parts[at] = c;
        compositions(parts, at + 1, remaining - c, emit);
    }
}

/// Spectra of every grid ensemble, shared between weight optimization for a
/// single `p` and the full score curve.
struct GridSpectra {
    grid: Vec<WeightVector>,
    ensembles: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
}

impl GridSpectra {
    fn compute(kernels: &[KernelMatrix], step: f64) -> Result<Self> {
        let grid = enumerate_simplex_grid(kernels.len(), step)?;
        check_compatible(kernels, &grid[0])?;
        let inputs = kernels
            .par_iter()
            .map(kernels::eigenvalues)
            .collect::<Result<Vec<_>>>()?;
        let ensembles = grid
            .par_iter()
            .map(|beta| kernels::eigenvalues(&combine(kernels, beta)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            ensembles,
            inputs,
        })
    }

    fn n(&self) -> usize {
        self.inputs[0].len()
    }

    /// Grid argmax of the score at `p`; earliest grid point wins ties.
    fn best(&self, p: usize) -> Result<ScorePoint> {
        check_p(p, self.n())?;
        let inputs: Vec<&[f64]> = self.inputs.iter().map(Vec::as_slice).collect();
        let scored = self
            .ensembles
            .par_iter()
            .map(|spectrum| {
                let g = gains_from_spectra(spectrum, &inputs, p)?;
                Ok((mean(&g), g))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut best = 0;
        for (i, (s, _)) in scored.iter().enumerate().skip(1) {
            let incumbent = scored[best].0;
            if *s > incumbent + TIE_TOLERANCE * incumbent.abs().max(1.0) {
                best = i;
            }
        }
        let (score, gains) = scored.into_iter().nth(best).expect("grid is non-empty");
        Ok(ScorePoint {
            p,
            best_beta: self.grid[best].clone(),
            score,
            gains,
        })
    }
}

/// Best weights and their score for one projection dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePoint {
    pub p: usize,
    pub best_beta: WeightVector,
    pub score: f64,
    pub gains: Vec<f64>,
}

/// Grid search over the simplex for the weights maximizing the score at `p`.
pub fn optimize_weights(kernels: &[KernelMatrix], p: usize, step: f64) -> Result<ScorePoint> {
    GridSpectra::compute(kernels, step)?.best(p)
}

/// Best score for every `p = 1..=p_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCurve {
    pub per_p: Vec<ScorePoint>,
}

impl ScoreCurve {
    pub fn scores(&self) -> Vec<f64> {
        self.per_p.iter().map(|s| s.score).collect()
    }

    pub fn at(&self, p: usize) -> Option<&ScorePoint> {
        self.per_p.iter().find(|s| s.p == p)
    }

    /// CSV with columns `p,score,beta_1..beta_M,g_1..g_pmax`; gain cells
    /// beyond `p` are left empty.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let m = self.per_p.first().map_or(0, |s| s.best_beta.len());
        let p_max = self.per_p.iter().map(|s| s.p).max().unwrap_or(0);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        let mut header = vec!["p".to_string(), "score".to_string()];
        header.extend((1..=m).map(|i| format!("beta_{i}")));
        header.extend((1..=p_max).map(|i| format!("g_{i}")));
        writeln!(out, "{}", header.join(",")).map_err(io_err)?;
        for point in &self.per_p {
            let mut row = vec![point.p.to_string(), point.score.to_string()];
            row.extend(point.best_beta.weights().iter().map(f64::to_string));
            row.extend(point.gains.iter().map(f64::to_string));
            row.resize(2 + m + p_max, String::new());
            writeln!(out, "{}", row.join(",")).map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Outcome of [`select_dimension`].
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionSelection {
    pub p_star: usize,
    pub curve: ScoreCurve,
    /// The curve was still rising at `p_max`.
    pub at_boundary: bool,
}

impl DimensionSelection {
    pub fn chosen(&self) -> &ScorePoint {
        &self.curve.per_p[self.p_star - 1]
    }
}

/// Smallest 1-based `p` with `scores[p-1] >= scores[p]`, or the last index
/// (flagged) when the sequence never stops rising.
pub fn first_local_maximum(scores: &[f64]) -> (usize, bool) {
    match scores.windows(2).position(|w| w[0] >= w[1]) {
        Some(i) => (i + 1, false),
        None => (scores.len(), true),
    }
}

/// Score curve over `p = 1..=p_max`, each `p` with its own best weights,
/// and the first local maximum of that curve.
pub fn select_dimension(kernels: &[KernelMatrix], p_max: usize, step: f64) -> Result<DimensionSelection> {
    if p_max < 2 {
        return Err(Error::InvalidArgument(format!("p_max must be at least 2, got {p_max}")));
    }
    let spectra = GridSpectra::compute(kernels, step)?;
    check_p(p_max, spectra.n())?;
    let per_p = (1..=p_max).map(|p| spectra.best(p)).collect::<Result<Vec<_>>>()?;
    let curve = ScoreCurve { per_p };
    let (p_star, at_boundary) = first_local_maximum(&curve.scores());
    if at_boundary {
        log::warn!("score curve still rising at p_max = {p_max}; using the boundary");
    }
    Ok(DimensionSelection {
        p_star,
        curve,
        at_boundary,
    })
}

/// Default dimension bound `min(N - 1, 10)`.
pub fn default_p_max(n: usize) -> usize {
    n.saturating_sub(1).min(DEFAULT_P_MAX)
}

/// Index of the kernel whose leading `p` eigenvalues have the largest sum;
/// the lowest index wins ties.
pub fn max_variance_view(spectra: &[&[f64]], p: usize) -> Result<usize> {
    if spectra.is_empty() {
        return Err(Error::InvalidArgument("no kernels".into()));
    }
    let mut best = 0;
    let mut best_sum = f64::NEG_INFINITY;
    for (i, s) in spectra.iter().enumerate() {
        check_p(p, s.len())?;
        let sum: f64 = s[..p].iter().sum();
        if sum > best_sum {
            best = i;
            best_sum = sum;
        }
    }
    Ok(best)
}

/// Grid maximizer of the unweighted objective `Σ_{i≤p} λ_i(K)`. Because that
/// sum is convex in the weights, the maximum sits on a vertex.
pub fn maximize_leading_variance(kernels: &[KernelMatrix], p: usize, step: f64) -> Result<(WeightVector, f64)> {
    let spectra = GridSpectra::compute(kernels, step)?;
    check_p(p, spectra.n())?;
    let mut best = 0;
    let mut best_value: f64 = spectra.ensembles[0][..p].iter().sum();
    for (i, s) in spectra.ensembles.iter().enumerate().skip(1) {
        let v: f64 = s[..p].iter().sum();
        if v > best_value + TIE_TOLERANCE * best_value.abs().max(1.0) {
            best = i;
            best_value = v;
        }
    }
    Ok((spectra.grid[best].clone(), best_value))
}
