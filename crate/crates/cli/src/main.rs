use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mkpca_core::{compare_modes, run_pipeline, Error, ErrorKind, Mode, RunConfig, RunReport};

const THREADS_ENV: &str = "MKPCA_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "mkpca",
    version,
    about = "Multiple-kernel PCA with variance-gain kernel weighting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one ensemble mode end to end.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Run all three modes with a shared projection dimension.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration. Flags given alongside it override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated view matrices (sample_id followed by feature columns).
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<PathBuf>>,
    /// Survival table with columns sample_id,time,event.
    #[arg(long)]
    survival: Option<PathBuf>,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    p_max: Option<usize>,
    /// Fixed projection dimension; skips the score curve.
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn into_config(self, mode: Option<Mode>) -> Result<RunConfig, Error> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => {
                let missing = |flag: &str| Error::InvalidArgument(format!("--{flag} is required without --config"));
                RunConfig::new(
                    self.views.clone().ok_or_else(|| missing("views"))?,
                    self.survival.clone().ok_or_else(|| missing("survival"))?,
                    self.out.clone().ok_or_else(|| missing("out"))?,
                )
            }
        };
        if let Some(v) = self.views {
            config.view_paths = v;
        }
        if let Some(v) = self.survival {
            config.survival_path = v;
        }
        if let Some(v) = self.out {
            config.output_dir = v;
        }
        if let Some(v) = mode {
            config.mode = v;
        }
        if let Some(v) = self.grid_step {
            config.grid_step = v;
        }
        if self.p_max.is_some() {
            config.p_max = self.p_max;
        }
        if self.p.is_some() {
            config.p = self.p;
        }
        if let Some(v) = self.k_min {
            config.k_range.0 = v;
        }
        if let Some(v) = self.k_max {
            config.k_range.1 = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.restarts {
            config.restarts = v;
        }
        config.validate()?;
        Ok(config)
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn summarize(report: &RunReport) {
    let beta: Vec<String> = report.chosen_beta.weights().iter().map(|w| format!("{w:.2}")).collect();
    eprintln!(
        "{}: N = {}, p = {}{}, beta = [{}], k = {}, silhouette = {:.4}, log-rank chi2 = {:.4} (df {}), p-value = {:.4e}",
        report.mode,
        report.n_samples,
        report.chosen_p,
        if report.p_at_boundary { " (at p_max)" } else { "" },
        beta.join(", "),
        report.selected_k,
        report.silhouette,
        report.logrank.chi_square,
        report.logrank.degrees_of_freedom,
        report.logrank.p_value,
    );
    for t in &report.timings {
        log::info!("{}: {} {:.3}s", report.mode, t.stage, t.seconds);
    }
}

fn execute(command: Command) -> Result<(), Error> {
    configure_threads()?;
    match command {
        Command::Run { common, mode } => {
            let config = common.into_config(mode)?;
            let report = run_pipeline(&config)?;
            summarize(&report);
            eprintln!("outputs written to {}", config.output_dir.display());
        }
        Command::Compare { common } => {
            let config = common.into_config(None)?;
            let (rows, reports) = compare_modes(&config)?;
            for report in &reports {
                summarize(report);
            }
            println!("mode,p,p_value,k");
            for r in &rows {
                println!("{},{},{},{}", r.mode, r.p, r.p_value, r.k);
            }
            eprintln!("outputs written to {}", config.output_dir.display());
        }
    }
    Ok(())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
