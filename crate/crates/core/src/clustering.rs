//! k-means with k-means++ seeding and silhouette-based choice of k.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 100;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_K_RANGE: (usize, usize) = (2, 15);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub k: usize,
    #[serde(skip)]
    pub centroids: DMatrix<f64>,
    pub inertia: f64,
    pub silhouette: f64,
    /// Some centroids coincide, e.g. fewer distinct points than clusters.
    pub degenerate: bool,
}

impl Clustering {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// CSV `sample_id,cluster`.
    pub fn write_csv(&self, sample_ids: &[String], path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        writeln!(out, "sample_id,cluster").map_err(io_err)?;
        for (id, c) in sample_ids.iter().zip(&self.assignments) {
            writeln!(out, "{id},{c}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols())
        .map(|j| {
            let d = points[(i, j)] - centroids[(c, j)];
            d * d
        })
        .sum()
}

/// Within-cluster sum of squared distances.
pub fn inertia(points: &DMatrix<f64>, assignments: &[usize], centroids: &DMatrix<f64>) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(points, i, centroids, c))
        .sum()
}

fn kmeans_plus_plus(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = points.nrows();
    let mut centroids = DMatrix::zeros(k, points.ncols());
    let first = rng.random_range(0..n);
    centroids.set_row(0, &points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let chosen = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.set_row(c, &points.row(chosen));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &centroids, c));
        }
    }
    centroids
}

fn assign(points: &DMatrix<f64>, centroids: &DMatrix<f64>) -> Vec<usize> {
    (0..points.nrows())
        .map(|i| {
            let mut best = 0;
            let mut best_d = sq_dist(points, i, centroids, 0);
            for c in 1..centroids.nrows() {
                let d = sq_dist(points, i, centroids, c);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Give every empty cluster the point farthest from its current centroid,
/// taken from a cluster that keeps at least one member.
fn repair_empty(points: &DMatrix<f64>, centroids: &DMatrix<f64>, assignments: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, &a) in assignments.iter().enumerate() {
            if sizes[a] > 1 {
                let d = sq_dist(points, i, centroids, a);
                if d > far_d {
                    far = Some(i);
                    far_d = d;
                }
            }
        }
        match far {
            Some(i) => assignments[i] = empty,
            None => return,
        }
    }
}

fn update(points: &DMatrix<f64>, assignments: &[usize], k: usize) -> DMatrix<f64> {
    let mut sums = DMatrix::zeros(k, points.ncols());
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for j in 0..points.ncols() {
            sums[(a, j)] += points[(i, j)];
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            for j in 0..points.ncols() {
                sums[(c, j)] /= count as f64;
            }
        }
    }
    sums
}

/// One Lloyd run from the given initial centroids. Returns the final
/// assignments, centroids and the inertia after every centroid update.
pub fn lloyd(points: &DMatrix<f64>, initial: DMatrix<f64>) -> (Vec<usize>, DMatrix<f64>, Vec<f64>) {
    let k = initial.nrows();
    let mut centroids = initial;
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut next = assign(points, &centroids);
        repair_empty(points, &centroids, &mut next, k);
        if next == assignments {
            break;
        }
        assignments = next;
        centroids = update(points, &assignments, k);
        history.push(inertia(points, &assignments, &centroids));
    }
    (assignments, centroids, history)
}

fn check_points(points: &DMatrix<f64>, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > points.nrows() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of points {}",
            points.nrows()
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("clustering input".into()));
    }
    Ok(())
}

/// Best-inertia k-means over `restarts` seeded k-means++ runs. Restart `r`
/// draws from a generator seeded with `seed + r`.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64, restarts: usize) -> Result<Clustering> {
    check_points(points, k)?;
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let runs: Vec<(Vec<usize>, DMatrix<f64>, f64)> = (0..restarts as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r));
            let init = kmeans_plus_plus(points, k, &mut rng);
            let (assignments, centroids, _) = lloyd(points, init);
            let sse = inertia(points, &assignments, &centroids);
            (assignments, centroids, sse)
        })
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .fold(0, |best, (i, run)| if run.2 < runs[best].2 { i } else { best });
    let (assignments, centroids, inertia) = runs.into_iter().nth(best).expect("at least one restart");

    let mut degenerate = false;
    for a in 0..k {
        for b in a + 1..k {
            let d: f64 = (0..centroids.ncols())
                .map(|j| (centroids[(a, j)] - centroids[(b, j)]).powi(2))
                .sum();
            degenerate |= d == 0.0;
        }
    }
    let silhouette = silhouette_width(points, &assignments)?;
    Ok(Clustering {
        assignments,
        k,
        centroids,
        inertia,
        silhouette,
        degenerate,
    })
}

/// Mean silhouette `(b - a) / max(a, b)` over all points, with Euclidean
/// distances; members of singleton clusters score 0.
pub fn silhouette_width(points: &DMatrix<f64>, assignments: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if assignments.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} assignments for {n} points",
            assignments.len()
        )));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::InvalidArgument("silhouette needs at least two clusters".into()));
    }
    let dist = |i: usize, j: usize| -> f64 {
        (0..points.ncols())
            .map(|c| (points[(i, c)] - points[(j, c)]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assignments[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[assignments[j]] += dist(i, j);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / n as f64)
}

/// Outcome of [`select_k`].
#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub best: Clustering,
    /// `(k, silhouette)` for every k tried.
    pub silhouettes: Vec<(usize, f64)>,
    /// The requested `k_max` was lowered to `N - 1`.
    pub clamped: bool,
}

/// Run k-means for every k in `k_min..=k_max` and keep the clustering with
/// the largest silhouette; the smaller k wins ties.
pub fn select_k(points: &DMatrix<f64>, k_min: usize, k_max: usize, seed: u64, restarts: usize) -> Result<KSelection> {
    let n = points.nrows();
    let upper = k_max.min(n.saturating_sub(1));
    let clamped = upper < k_max;
    if clamped {
        log::warn!("k_max = {k_max} lowered to {upper} for {n} samples");
    }
    if k_min < 2 || k_min > upper {
        return Err(Error::InvalidArgument(format!(
            "empty cluster-count range {k_min}..={upper} for {n} samples"
        )));
    }
    let mut best: Option<Clustering> = None;
    let mut silhouettes = Vec::new();
    for k in k_min..=upper {
        let c = kmeans(points, k, seed, restarts)?;
        silhouettes.push((k, c.silhouette));
        if best.as_ref().is_none_or(|b| c.silhouette > b.silhouette) {
            best = Some(c);
        }
    }
    Ok(KSelection {
        best: best.expect("non-empty k range"),
        silhouettes,
        clamped,
    })
}
