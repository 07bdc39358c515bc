//! `run` and `sweep` drivers and their output files.
//!
//! Layout of a run directory:
//!
//! ```text
//! <out>/seed-<s>/metrics.csv   one row per evaluated round
//! <out>/seed-<s>/report.json   config echo, all round metrics, final params
//! <out>/summary.csv            mean/std of final accuracy and variance
//! ```
//!
//! A sweep writes one such tree per value under `<out>/<axis>=<value>/`,
//! a long-format `<out>/sweep.csv` and one summary row per value.
//!
//! `metrics.csv` columns are fixed: [`METRICS_COLUMNS`]. Diagnostics are
//! empty on round 0.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{self, ConfigError, ExperimentConfig};
use crate::engine::{self, EngineError, ExperimentReport, RoundMetrics, RunFailure};
use crate::parallel::Execution;

pub const METRICS_COLUMNS: [&str; 8] = [
    "round",
    "global_acc",
    "acc_variance",
    "fair_loss",
    "agg_grad_norm",
    "lemma_lhs",
    "lemma_rhs",
    "kept_count",
];

pub const SUMMARY_COLUMNS: [&str; 7] = [
    "axis",
    "axis_value",
    "n_seeds",
    "final_acc_mean",
    "final_acc_std",
    "acc_variance_mean",
    "acc_variance_std",
];

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("run failed: {0}")]
    Run(EngineError),
    #[error("seed {seed}: {source}")]
    Divergence {
        seed: u64,
        #[source]
        source: EngineError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CommandError {
    /// 0 success, 2 config error, 3 divergence, 4 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) | CommandError::Usage(_) => 2,
            CommandError::Divergence { .. } => 3,
            CommandError::Io { .. } => 4,
            CommandError::Run(EngineError::Data(_)) => 4,
            CommandError::Run(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CommandError>;

/// Everything `run` needs, resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl RunManifest {
    /// Parses the config and overrides. An empty `seeds` list means the
    /// config's own seed.
    pub fn new(
        config_path: Option<PathBuf>,
        overrides: &[String],
        out_dir: PathBuf,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        let overrides = overrides
            .iter()
            .map(|o| config::parse_override(o))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let config = ExperimentConfig::parse(config_path.as_deref(), &overrides)?;
        let seeds = if seeds.is_empty() { vec![config.seed] } else { seeds };
        Ok(Self {
            config_path,
            overrides,
            config,
            out_dir,
            seeds,
        })
    }
}

/// Final-round statistics for one group of seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub axis: String,
    pub axis_value: String,
    pub n_seeds: usize,
    pub final_acc_mean: f64,
    pub final_acc_std: f64,
    pub acc_variance_mean: f64,
    pub acc_variance_std: f64,
}

impl SummaryRow {
    pub fn from_reports(axis: &str, axis_value: &str, reports: &[ExperimentReport]) -> Self {
        let acc: Vec<f64> = reports.iter().map(|r| r.final_metrics().global_accuracy).collect();
        let var: Vec<f64> = reports.iter().map(|r| r.final_metrics().accuracy_variance).collect();
        let (final_acc_mean, final_acc_std) = mean_std(&acc);
        let (acc_variance_mean, acc_variance_std) = mean_std(&var);
        Self {
            axis: axis.to_string(),
            axis_value: axis_value.to_string(),
            n_seeds: reports.len(),
            final_acc_mean,
            final_acc_std,
            acc_variance_mean,
            acc_variance_std,
        }
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_row(m: &RoundMetrics) -> String {
    let kept = if m.round == 0 {
        String::new()
    } else {
        m.kept_indices.len().to_string()
    };
    format!(
        "{},{},{},{},{},{},{},{}",
        m.round,
        m.global_accuracy,
        m.accuracy_variance,
        m.fair_loss_h,
        fmt_opt(m.agg_grad_norm),
        fmt_opt(m.lemma_lhs),
        fmt_opt(m.lemma_rhs),
        kept
    )
}

/// `metrics.csv` content for one run.
pub fn metrics_csv(report: &ExperimentReport) -> String {
    let mut out = METRICS_COLUMNS.join(",");
    out.push('\n');
    for m in &report.rounds {
        out.push_str(&metrics_row(m));
        out.push('\n');
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = SUMMARY_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.axis, r.axis_value, r.n_seeds, r.final_acc_mean, r.final_acc_std, r.acc_variance_mean, r.acc_variance_std
        );
    }
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes via a temporary sibling and rename, so readers never see a
/// half-written file.
fn write_atomic(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, content).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Fails early when `dir` cannot be created or written.
fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(io_err(&probe))?;
    fs::remove_file(&probe).map_err(io_err(&probe))
}

fn seed_dir(base: &Path, seed: u64) -> PathBuf {
    base.join(format!("seed-{seed}"))
}

fn write_run_files(dir: &Path, report: &ExperimentReport) -> Result<()> {
    write_atomic(&dir.join("metrics.csv"), &metrics_csv(report))?;
    write_atomic(&dir.join("report.json"), &report.to_json())
}

/// Runs every seed of `cfg` and writes the per-seed files under `dir`.
fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64], dir: &Path, exec: Execution) -> Result<Vec<ExperimentReport>> {
    let prepared = engine::Experiment::prepare(cfg).map_err(CommandError::Run)?;
    let results = exec.map_slice(seeds, |&seed| {
        let mut exp = prepared.clone().with_execution(exec);
        exp.cfg.seed = seed;
        (seed, exp.run())
    });
    let mut reports = Vec::with_capacity(seeds.len());
    let mut failure: Option<CommandError> = None;
    for (seed, result) in results {
        match result {
            Ok(report) => {
                write_run_files(&seed_dir(dir, seed), &report)?;
                reports.push(report);
            }
            Err(RunFailure { error, partial }) => {
                if let Some(p) = partial {
                    write_atomic(&seed_dir(dir, seed).join("report.json"), &p.to_json())?;
                }
                let err = match error {
                    e @ EngineError::Divergence { .. } => CommandError::Divergence { seed, source: e },
                    e => CommandError::Run(e),
                };
                failure.get_or_insert(err);
            }
        }
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(reports),
    }
}

/// What `run` produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reports: Vec<ExperimentReport>,
    pub summary: SummaryRow,
}

pub fn run_command(manifest: &RunManifest, exec: Execution) -> Result<RunOutput> {
    ensure_writable(&manifest.out_dir)?;
    let reports = run_seeds(&manifest.config, &manifest.seeds, &manifest.out_dir, exec)?;
    let summary = SummaryRow::from_reports("", "", &reports);
    write_atomic(
        &manifest.out_dir.join("summary.csv"),
        &summary_csv(std::slice::from_ref(&summary)),
    )?;
    Ok(RunOutput { reports, summary })
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    /// `(value, reports over seeds)` in the order given.
    pub points: Vec<(String, Vec<ExperimentReport>)>,
    pub summary: Vec<SummaryRow>,
}

/// One run per `(value, seed)`; `axis` must be a numeric config key.
pub fn sweep_command(manifest: &RunManifest, axis: &str, values: &[String], exec: Execution) -> Result<SweepOutput> {
    let spec = config::key_spec(axis).ok_or_else(|| {
        CommandError::Config(config::parse_override(&format!("{axis}=0")).unwrap_err())
    })?;
    if !spec.numeric {
        return Err(CommandError::Usage(format!("sweep axis {axis:?} is not a numeric key")));
    }
    if values.is_empty() {
        return Err(CommandError::Usage("sweep needs at least one value".into()));
    }
    // resolve every point before computing anything
    let mut points = Vec::with_capacity(values.len());
    for v in values {
        v.parse::<f64>().map_err(|_| ConfigError::Type {
            key: axis.to_string(),
            expected: "a number",
            value: v.clone(),
        })?;
        let mut overrides = manifest.overrides.clone();
        overrides.push((axis.to_string(), v.clone()));
        let cfg = ExperimentConfig::parse(manifest.config_path.as_deref(), &overrides)?;
        points.push((v.clone(), cfg));
    }
    ensure_writable(&manifest.out_dir)?;

    let mut long = String::from("axis_value,seed,");
    long.push_str(&METRICS_COLUMNS.join(","));
    long.push('\n');
    let mut summary = Vec::new();
    let mut results = Vec::new();
    for (value, cfg) in points {
        let dir = manifest.out_dir.join(format!("{axis}={value}"));
        let reports = run_seeds(&cfg, &manifest.seeds, &dir, exec)?;
        for (seed, report) in manifest.seeds.iter().zip(&reports) {
            for m in &report.rounds {
                let _ = writeln!(long, "{value},{seed},{}", metrics_row(m));
            }
        }
        summary.push(SummaryRow::from_reports(axis, &value, &reports));
        results.push((value, reports));
    }
    write_atomic(&manifest.out_dir.join("sweep.csv"), &long)?;
    write_atomic(&manifest.out_dir.join("summary.csv"), &summary_csv(&summary))?;
    Ok(SweepOutput {
        points: results,
        summary,
    })
}
