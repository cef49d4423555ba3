//! End-to-end runs: ingest, per-view kernels, ensemble, kernel PCA,
//! clustering and survival evaluation, with all artifacts written to disk.
//!
//! Three ensemble modes are supported: `gain` (weights from the gain score),
//! `max_variance` (the single view with the largest leading variance) and
//! `average` (equal weights). All modes share one projection dimension,
//! taken from the gain-score curve unless fixed in the config.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clustering::{self, select_k};
use crate::data::{align_samples, load_matrix, load_survival, DataMatrix, SurvivalRecord};
use crate::error::{Error, Result};
use crate::integration::{
    self, combine, gains_from_spectra, max_variance_view, optimize_weights, select_dimension, ScoreCurve, WeightVector,
};
use crate::kernels::{center_kernel, default_gamma, eigendecompose, gaussian_kernel, EigenSystem, KernelMatrix};
use crate::kpca::project_with;
use crate::survival::{kaplan_meier, logrank_test, write_km_csv, LogRankResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Gain,
    MaxVariance,
    Average,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Gain, Mode::MaxVariance, Mode::Average];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Gain => "gain",
            Mode::MaxVariance => "max_variance",
            Mode::Average => "average",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gain" => Ok(Mode::Gain),
            "max_variance" => Ok(Mode::MaxVariance),
            "average" => Ok(Mode::Average),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?} (expected gain, max_variance or average)"
            ))),
        }
    }
}

fn default_grid_step() -> f64 {
    integration::DEFAULT_GRID_STEP
}
fn default_k_range() -> (usize, usize) {
    clustering::DEFAULT_K_RANGE
}
fn default_seed() -> u64 {
    clustering::DEFAULT_SEED
}
fn default_restarts() -> usize {
    clustering::DEFAULT_RESTARTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub view_paths: Vec<PathBuf>,
    pub survival_path: PathBuf,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    /// Upper end of the score curve; `min(N - 1, 10)` when unset.
    #[serde(default)]
    pub p_max: Option<usize>,
    /// Fixed projection dimension. When set, no score curve is computed.
    #[serde(default)]
    pub p: Option<usize>,
    #[serde(default = "default_k_range")]
    pub k_range: (usize, usize),
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(view_paths: Vec<PathBuf>, survival_path: PathBuf, output_dir: PathBuf) -> Self {
        Self {
            view_paths,
            survival_path,
            mode: Mode::default(),
            grid_step: default_grid_step(),
            p_max: None,
            p: None,
            k_range: default_k_range(),
            seed: default_seed(),
            restarts: default_restarts(),
            output_dir,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.view_paths.is_empty() {
            return bad("at least one view is required".into());
        }
        for path in self.view_paths.iter().chain([&self.survival_path]) {
            if !path.is_file() {
                return bad(format!("input file {} does not exist", path.display()));
            }
        }
        integration::enumerate_simplex_grid(1, self.grid_step)?;
        if let Some(p_max) = self.p_max {
            if p_max < 2 {
                return bad(format!("p_max must be at least 2, got {p_max}"));
            }
        }
        if self.p == Some(0) {
            return bad("p must be positive".into());
        }
        let (k_min, k_max) = self.k_range;
        if k_min < 2 || k_max < k_min {
            return bad(format!("invalid cluster range {k_min}..={k_max}"));
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewSummary {
    pub name: String,
    pub path: PathBuf,
    pub n_features: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: Mode,
    pub n_samples: usize,
    pub views: Vec<ViewSummary>,
    pub chosen_p: usize,
    /// The score curve was still rising at `p_max`.
    pub p_at_boundary: bool,
    pub chosen_beta: WeightVector,
    /// Gain score of the chosen ensemble at `chosen_p`.
    pub score: f64,
    pub score_curve: Option<ScoreCurve>,
    pub selected_k: usize,
    pub silhouette: f64,
    pub silhouettes: Vec<(usize, f64)>,
    pub cluster_sizes: Vec<usize>,
    pub logrank: LogRankResult,
    /// Wall-clock per stage. Not written to `report.json`, which must be
    /// identical across runs.
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub mode: Mode,
    pub p: usize,
    pub p_value: f64,
    pub k: usize,
}

struct Timer {
    timings: Vec<StageTiming>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Self {
            timings: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage,
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

/// Aligned inputs and per-view kernels shared between modes.
struct Prepared {
    views: Vec<DataMatrix>,
    summaries: Vec<ViewSummary>,
    survival: Vec<SurvivalRecord>,
    centered: Vec<KernelMatrix>,
    spectra: Vec<EigenSystem>,
}

impl Prepared {
    fn sample_ids(&self) -> &[String] {
        self.views[0].sample_ids()
    }
}

fn view_names(paths: &[PathBuf]) -> Vec<String> {
    let mut seen = HashSet::new();
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("view{}", i + 1));
            if seen.insert(stem.clone()) {
                stem
            } else {
                format!("{stem}_{}", i + 1)
            }
        })
        .collect()
}

fn prepare(config: &RunConfig, timer: &mut Timer) -> Result<Prepared> {
    let names = view_names(&config.view_paths);
    let views = config
        .view_paths
        .iter()
        .zip(&names)
        .map(|(path, name)| load_matrix(path, name))
        .collect::<Result<Vec<_>>>()
        .map_err(Error::at_stage("load views"))?;
    let survival = load_survival(&config.survival_path).map_err(Error::at_stage("load survival"))?;
    let (views, survival) = align_samples(&views, &survival).map_err(Error::at_stage("align samples"))?;
    timer.lap("ingest");

    let mut summaries = Vec::new();
    let mut centered = Vec::new();
    for (view, path) in views.iter().zip(&config.view_paths) {
        let gamma = default_gamma(view.n_features()).map_err(Error::at_stage("kernels"))?;
        let k = gaussian_kernel(view, gamma).map_err(Error::at_stage("kernels"))?;
        centered.push(center_kernel(&k));
        summaries.push(ViewSummary {
            name: view.view_name().to_string(),
            path: path.clone(),
            n_features: view.n_features(),
            gamma,
        });
    }
    let spectra = centered
        .iter()
        .map(eigendecompose)
        .collect::<Result<Vec<_>>>()
        .map_err(Error::at_stage("kernels"))?;
    timer.lap("kernels");
    Ok(Prepared {
        views,
        summaries,
        survival,
        centered,
        spectra,
    })
}

/// Projection dimension shared by all modes, with the gain curve when it
/// was computed.
struct DimensionChoice {
    p: usize,
    at_boundary: bool,
    curve: Option<ScoreCurve>,
}

fn choose_dimension(config: &RunConfig, prepared: &Prepared) -> Result<DimensionChoice> {
    if let Some(p) = config.p {
        return Ok(DimensionChoice {
            p,
            at_boundary: false,
            curve: None,
        });
    }
    let n = prepared.views[0].n_samples();
    let p_max = config.p_max.unwrap_or_else(|| integration::default_p_max(n));
    let selection =
        select_dimension(&prepared.centered, p_max, config.grid_step).map_err(Error::at_stage("select dimension"))?;
    Ok(DimensionChoice {
        p: selection.p_star,
        at_boundary: selection.at_boundary,
        curve: Some(selection.curve),
    })
}

fn mode_weights(mode: Mode, config: &RunConfig, prepared: &Prepared, dim: &DimensionChoice) -> Result<WeightVector> {
    let m = prepared.centered.len();
    match mode {
        Mode::Gain => match dim.curve.as_ref().and_then(|c| c.at(dim.p)) {
            Some(point) => Ok(point.best_beta.clone()),
            None => Ok(optimize_weights(&prepared.centered, dim.p, config.grid_step)?.best_beta),
        },
        Mode::MaxVariance => {
            let spectra: Vec<&[f64]> = prepared.spectra.iter().map(|e| e.eigenvalues.as_slice()).collect();
            WeightVector::vertex(m, max_variance_view(&spectra, dim.p)?)
        }
        Mode::Average => WeightVector::uniform(m),
    }
}

fn output_error(path: &Path, e: impl fmt::Display) -> Error {
    Error::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| output_error(dir, e))
}

fn run_mode(
    mode: Mode,
    config: &RunConfig,
    prepared: &Prepared,
    dim: &DimensionChoice,
    out_dir: &Path,
    mut timer: Timer,
) -> Result<RunReport> {
    let beta = mode_weights(mode, config, prepared, dim).map_err(Error::at_stage("weights"))?;
    let ensemble = combine(&prepared.centered, &beta).map_err(Error::at_stage("ensemble"))?;
    let eig = eigendecompose(&ensemble).map_err(Error::at_stage("ensemble"))?;
    let inputs: Vec<&[f64]> = prepared.spectra.iter().map(|e| e.eigenvalues.as_slice()).collect();
    let gains = gains_from_spectra(&eig.eigenvalues, &inputs, dim.p).map_err(Error::at_stage("ensemble"))?;
    let score = gains.iter().sum::<f64>() / gains.len() as f64;
    let projection = project_with(&eig, prepared.sample_ids().to_vec(), dim.p).map_err(Error::at_stage("project"))?;
    timer.lap("ensemble and projection");

    let (k_min, k_max) = config.k_range;
    let selection = select_k(&projection.coordinates, k_min, k_max, config.seed, config.restarts)
        .map_err(Error::at_stage("clustering"))?;
    let clusters = selection.best;
    timer.lap("clustering");

    let logrank = logrank_test(&clusters.assignments, &prepared.survival).map_err(Error::at_stage("survival"))?;
    let mut km = Vec::with_capacity(clusters.k);
    for c in 0..clusters.k {
        let members: Vec<SurvivalRecord> = prepared
            .survival
            .iter()
            .zip(&clusters.assignments)
            .filter(|(_, &a)| a == c)
            .map(|(r, _)| r.clone())
            .collect();
        km.push(kaplan_meier(&members).map_err(Error::at_stage("survival"))?);
    }
    timer.lap("survival");

    ensure_dir(out_dir)?;
    projection.write_csv(out_dir.join("embedding.csv"))?;
    clusters.write_csv(prepared.sample_ids(), out_dir.join("clusters.csv"))?;
    if let Some(curve) = &dim.curve {
        curve.write_csv(out_dir.join("score_curve.csv"))?;
    }
    for (c, curve) in km.iter().enumerate() {
        write_km_csv(curve, out_dir.join(format!("km_cluster_{c}.csv")))?;
    }

    let cluster_sizes = clusters.cluster_sizes();
    let mut report = RunReport {
        mode,
        n_samples: prepared.views[0].n_samples(),
        views: prepared.summaries.clone(),
        chosen_p: dim.p,
        p_at_boundary: dim.at_boundary,
        chosen_beta: beta,
        score,
        score_curve: dim.curve.clone(),
        selected_k: clusters.k,
        silhouette: clusters.silhouette,
        silhouettes: selection.silhouettes,
        cluster_sizes,
        logrank,
        timings: Vec::new(),
    };
    let report_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| output_error(&report_path, e))?;
    std::fs::write(&report_path, json + "\n").map_err(|e| output_error(&report_path, e))?;
    timer.lap("write outputs");
    report.timings = timer.timings;
    Ok(report)
}

/// Run one mode end to end and write its artifacts to `config.output_dir`.
pub fn run_pipeline(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let mut timer = Timer::new();
    let prepared = prepare(config, &mut timer)?;
    let dim = choose_dimension(config, &prepared)?;
    timer.lap("select dimension");
    run_mode(config.mode, config, &prepared, &dim, &config.output_dir, timer)
}

/// Run all three modes with the same projection dimension. Each mode writes
/// its artifacts to `output_dir/<mode>/`; the summary table goes to
/// `output_dir/comparison.csv`.
pub fn compare_modes(config: &RunConfig) -> Result<(Vec<ComparisonRow>, Vec<RunReport>)> {
    config.validate()?;
    let mut timer = Timer::new();
    let prepared = prepare(config, &mut timer)?;
    let dim = choose_dimension(config, &prepared)?;
    timer.lap("select dimension");
    let shared = timer.timings;

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for mode in Mode::ALL {
        let timer = Timer {
            timings: shared.clone(),
            last: Instant::now(),
        };
        let report = run_mode(
            mode,
            config,
            &prepared,
            &dim,
            &config.output_dir.join(mode.as_str()),
            timer,
        )?;
        rows.push(ComparisonRow {
            mode,
            p: report.chosen_p,
            p_value: report.logrank.p_value,
            k: report.selected_k,
        });
        reports.push(report);
    }

    ensure_dir(&config.output_dir)?;
    let path = config.output_dir.join("comparison.csv");
    let mut text = String::from("mode,p,p_value,k\n");
    for r in &rows {
        text.push_str(&format!("{},{},{},{}\n", r.mode, r.p, r.p_value, r.k));
    }
    std::fs::write(&path, text).map_err(|e| output_error(&path, e))?;
    Ok((rows, reports))
}
