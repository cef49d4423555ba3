//! Generators for planted-structure datasets used by the test suites and
//! benchmarks.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::data::{DataMatrix, SurvivalRecord};
use crate::error::{Error, Result};

/// Several views over the same samples with known cluster labels.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub views: Vec<DataMatrix>,
    /// Planted label per sample, in sample order.
    pub labels: Vec<usize>,
    pub survival: Vec<SurvivalRecord>,
}

fn sample_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (0..n).map(|i| format!("s{i:0width$}")).collect()
}

/// Four planted clusters of `n / 4` samples. The first view separates
/// clusters {0,1} from {2,3}, the second separates {0,2} from {1,3}; neither
/// view alone resolves all four. Each view has `d` features: one signal
/// axis with class centers at `±separation/2`, the rest pure noise, all with
/// Gaussian noise of standard deviation `noise`.
///
/// Survival times are exponential with a cluster-specific hazard, censored
/// uniformly at random.
pub fn complementary_views_with(n: usize, d: usize, separation: f64, noise: f64, seed: u64) -> SyntheticData {
    assert!(n >= 4 && n.is_multiple_of(4), "n must be a positive multiple of 4");
    assert!(d >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).expect("noise must be finite and nonnegative");
    let labels: Vec<usize> = (0..n).map(|i| i / (n / 4)).collect();
    let ids = sample_ids(n);

    let views = (0..2)
        .map(|v| {
            let values = DMatrix::from_fn(n, d, |i, j| {
                let bit = if v == 0 { labels[i] / 2 } else { labels[i] % 2 };
                let center = if j == 0 {
                    if bit == 0 {
                        -separation / 2.0
                    } else {
                        separation / 2.0
                    }
                } else {
                    0.0
                };
                center + normal.sample(&mut rng)
            });
            DataMatrix::new(format!("view{}", v + 1), ids.clone(), values).expect("valid synthetic view")
        })
        .collect();

    let survival = planted_survival(&ids, &labels, &[0.002, 0.004, 0.008, 0.016], &mut rng);
    SyntheticData {
        views,
        labels,
        survival,
    }
}

/// [`complementary_views_with`] with separation 4 and the given noise.
pub fn complementary_views(n: usize, d: usize, noise: f64, seed: u64) -> SyntheticData {
    complementary_views_with(n, d, 4.0, noise, seed)
}

fn planted_survival(ids: &[String], labels: &[usize], hazards: &[f64], rng: &mut ChaCha8Rng) -> Vec<SurvivalRecord> {
    ids.iter()
        .zip(labels)
        .map(|(id, &label)| {
            let hazard = hazards[label % hazards.len()];
            let event_time: f64 = Exp::new(hazard).expect("positive hazard").sample(rng);
            let censor_time: f64 = rng.random_range(0.0..1500.0);
            let (time, event) = if event_time <= censor_time {
                (event_time, true)
            } else {
                (censor_time, false)
            };
            SurvivalRecord::new(id.clone(), time.round().max(1.0), event)
        })
        .collect()
}

/// Isotropic Gaussian blobs around `centers`, `per_blob` points each.
pub fn blobs(centers: &[Vec<f64>], per_blob: usize, sigma: f64, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let dim = centers[0].len();
    let n = centers.len() * per_blob;
    let labels: Vec<usize> = (0..n).map(|i| i / per_blob).collect();
    let points = DMatrix::from_fn(n, dim, |i, j| centers[labels[i]][j] + normal.sample(&mut rng));
    (points, labels)
}

/// Three views of a larger cohort where one view dominates in variance,
/// shaped like a mid-sized tumour cohort (few hundred samples).
pub fn cohort(n: usize, feature_counts: &[usize], clusters: usize, seed: u64) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = sample_ids(n);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..clusters)).collect();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let views = feature_counts
        .iter()
        .enumerate()
        .map(|(v, &d)| {
            let centers = DMatrix::from_fn(clusters, d, |_, _| unit.sample(&mut rng) * (v + 1) as f64);
            let values = DMatrix::from_fn(n, d, |i, j| centers[(labels[i], j)] + unit.sample(&mut rng));
            DataMatrix::new(format!("view{}", v + 1), ids.clone(), values).expect("valid synthetic view")
        })
        .collect();
    let hazards: Vec<f64> = (0..clusters).map(|c| 0.001 * (c + 1) as f64).collect();
    let survival = planted_survival(&ids, &labels, &hazards, &mut rng);
    SyntheticData {
        views,
        labels,
        survival,
    }
}

impl SyntheticData {
    /// Write `view<i>.csv` files and `survival.csv` into `dir`. With
    /// `shuffle_seed`, rows of every file are written in an independent
    /// random order.
    pub fn write_csvs(&self, dir: impl AsRef<Path>, shuffle_seed: Option<u64>) -> Result<(Vec<PathBuf>, PathBuf)> {
        let dir = dir.as_ref();
        let mut rng = shuffle_seed.map(ChaCha8Rng::seed_from_u64);
        let mut order = |n: usize| {
            let mut idx: Vec<usize> = (0..n).collect();
            if let Some(rng) = rng.as_mut() {
                idx.shuffle(rng);
            }
            idx
        };
        let mut view_paths = Vec::new();
        for view in &self.views {
            let path = dir.join(format!("{}.csv", view.view_name()));
            let mut text = String::from("sample_id");
            for j in 0..view.n_features() {
                text.push_str(&format!(",f{}", j + 1));
            }
            text.push('\n');
            for i in order(view.n_samples()) {
                text.push_str(&view.sample_ids()[i]);
                for v in view.values().row(i).iter() {
                    text.push_str(&format!(",{v}"));
                }
                text.push('\n');
            }
            write_file(&path, &text)?;
            view_paths.push(path);
        }
        let path = dir.join("survival.csv");
        let mut text = String::from("sample_id,time,event\n");
        for i in order(self.survival.len()) {
            let r = &self.survival[i];
            text.push_str(&format!("{},{},{}\n", r.sample_id, r.time, u8::from(r.event)));
        }
        write_file(&path, &text)?;
        Ok((view_paths, path))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Fraction of samples whose predicted cluster matches the planted label
/// under the best one-to-one relabeling of predicted clusters.
pub fn best_permutation_accuracy(labels: &[usize], predicted: &[usize]) -> f64 {
    assert_eq!(labels.len(), predicted.len());
    let k_true = labels.iter().max().map_or(0, |m| m + 1);
    let k_pred = predicted.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; k_true]; k_pred];
    for (&t, &p) in labels.iter().zip(predicted) {
        counts[p][t] += 1;
    }
    // exhaustive assignment over predicted clusters; fine for the small k used in tests
    fn search(row: usize, counts: &[Vec<usize>], used: &mut Vec<bool>, acc: usize, best: &mut usize) {
        if row == counts.len() {
            *best = (*best).max(acc);
            return;
        }
        // leave this predicted cluster unmatched
        search(row + 1, counts, used, acc, best);
        for t in 0..used.len() {
            if !used[t] {
                used[t] = true;
                search(row + 1, counts, used, acc + counts[row][t], best);
                used[t] = false;
            }
        }
    }
    let mut best = 0;
    search(0, &counts, &mut vec![false; k_true], 0, &mut best);
    best as f64 / labels.len() as f64
}
