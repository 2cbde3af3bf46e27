//! Command-line front end: config files, the five commands and error records.

mod plot;

pub use plot::{render_svg, PlotError, Series};

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::envs::{make_sysid_dataset, EnvError};
use crate::igmm_vae::{three_cluster_data, train_clustering, Architecture, IgmmError, IgmmVae};
use crate::numerics::{ParamStore, RngStream};
use crate::trainer::{evaluate, fit_sysid, load_agent, run_d2e, ConfigError, RunConfig, RunOptions, TrainError};

/// Environment variable that replaces the configured seed.
pub const SEED_VAR: &str = "D2E_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Config { path: String, source: ConfigError },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Igmm(#[from] IgmmError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Stable name of the failure, used as the `error` field of the record.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "Io",
            CliError::Config { source, .. } => config_kind(source),
            CliError::Train(e) => match e {
                TrainError::Config(c) => config_kind(c),
                TrainError::VersionMismatch { .. } => "VersionMismatch",
                TrainError::CorruptCheckpoint(_) => "CorruptCheckpoint",
                TrainError::ConfigMismatch => "ConfigMismatch",
                TrainError::EmptyBuffer => "EmptyBuffer",
                TrainError::NoEligibleEpisode { .. } => "NoEligibleEpisode",
                TrainError::Io(_) => "Io",
                _ => "TrainingFailed",
            },
            CliError::Igmm(_) => "TrainingFailed",
            CliError::Env(_) => "Environment",
            CliError::Plot(_) => "BadMetrics",
            CliError::Usage(_) => "Usage",
        }
    }

    /// One-line JSON record: `{"error": kind, "message": text}`.
    pub fn record(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

fn config_kind(e: &ConfigError) -> &'static str {
    match e {
        ConfigError::UnknownKey(_) => "UnknownKey",
        ConfigError::TypeMismatch { .. } => "TypeMismatch",
        ConfigError::MissingRequired(_) => "MissingRequired",
        ConfigError::Syntax { .. } => "Syntax",
        ConfigError::Invalid(_) => "InvalidConfig",
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.into(), source })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.into(), source })
}

/// Apply a flat `key=value` text on top of `config`.
///
/// Blank lines and lines starting with `#` are skipped; surrounding
/// whitespace is trimmed from keys and values.
pub fn apply_text(config: &mut RunConfig, text: &str) -> Result<(), ConfigError> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: n + 1 })?;
        config.set(k.trim(), v.trim())?;
    }
    Ok(())
}

/// Defaults, then the file, then the seed variable, then `overrides`.
pub fn parse_config_from(text: &str, seed_var: Option<&str>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    apply_text(&mut config, text).map_err(|source| CliError::Config { path: "config".into(), source })?;
    if let Some(seed) = seed_var {
        config.set("seed", seed).map_err(|source| CliError::Config { path: SEED_VAR.into(), source })?;
    }
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| CliError::Usage(format!("override `{o}` is not key=value")))?;
        config.set(k.trim(), v.trim()).map_err(|source| CliError::Config { path: "--set".into(), source })?;
    }
    Ok(config)
}

/// Read `path` (when given) and layer the overrides on top.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = match path {
        Some(p) => read(p)?,
        None => String::new(),
    };
    let seed = std::env::var(SEED_VAR).ok();
    parse_config_from(&text, seed.as_deref(), overrides).map_err(|e| match (e, path) {
        (CliError::Config { path: w, source }, Some(p)) if w == "config" => CliError::Config { path: p.display().to_string(), source },
        (e, _) => e,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub command: &'static str,
    pub out_dir: String,
    pub iterations: usize,
    pub interrupted: bool,
    pub eval_mean: Option<f64>,
    pub eval_sd: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary {
    pub command: &'static str,
    pub episodes: usize,
    pub mean: f64,
    pub sd: f64,
    pub returns: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SysidSummary {
    pub command: &'static str,
    pub rmse: f64,
    pub final_loss: f64,
    pub test_steps: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterSummary {
    pub command: &'static str,
    pub purity: f64,
    pub occupied: usize,
    pub mean_weights: Vec<f64>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64;
    (m, var.sqrt())
}

fn echo_config(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(&config.out_dir);
    write(&dir.join("config.txt"), config.to_text())?;
    Ok(dir)
}

pub fn cmd_train(config: &RunConfig, resume: bool, stop_after: Option<usize>) -> Result<TrainSummary, CliError> {
    let dir = PathBuf::from(&config.out_dir);
    let report = run_d2e(config, &RunOptions { out_dir: Some(dir), resume, stop_after })?;
    let stats = report.final_eval.as_deref().map(mean_sd);
    Ok(TrainSummary {
        command: "train",
        out_dir: config.out_dir.clone(),
        iterations: report.completed,
        interrupted: report.interrupted,
        eval_mean: stats.map(|s| s.0),
        eval_sd: stats.map(|s| s.1),
    })
}

/// Greedy returns of the agent stored at `checkpoint`, rebuilt from the
/// `config.txt` written next to it.
pub fn cmd_eval(checkpoint: &Path, episodes: usize, config: Option<&RunConfig>) -> Result<EvalSummary, CliError> {
    let config = match config {
        Some(c) => c.clone(),
        None => {
            let dir = checkpoint.parent().unwrap_or(Path::new("."));
            let mut c = RunConfig::default();
            let path = dir.join("config.txt");
            apply_text(&mut c, &read(&path)?).map_err(|source| CliError::Config { path: path.display().to_string(), source })?;
            c
        }
    };
    let agent = load_agent(&config, checkpoint)?;
    let returns = evaluate(&agent, config.env, episodes, config.seed)?;
    let (mean, sd) = mean_sd(&returns);
    Ok(EvalSummary { command: "eval", episodes, mean, sd, returns })
}

/// Fit the world model's transition layer alone on a simulated sequence.
pub fn cmd_sysid(config: &RunConfig) -> Result<SysidSummary, CliError> {
    config.rgp.validate().map_err(TrainError::from)?;
    let s = &config.sysid;
    let rng = RngStream::new(config.seed).split("sysid");
    let data = make_sysid_dataset(s.system, s.length, s.noise_std, config.rgp.lag, &mut rng.split("data"))?;
    let report = fit_sysid(&data, &config.rgp, s.steps, s.learning_rate, &mut rng.split("fit"))?;
    let summary = SysidSummary {
        command: "sysid",
        rmse: report.rmse,
        final_loss: report.losses.last().copied().unwrap_or(f64::NAN),
        test_steps: report.predictions.len(),
    };
    let dir = echo_config(config)?;
    write(&dir.join("sysid.json"), serde_json::to_string(&summary).expect("plain record") + "\n")?;
    Ok(summary)
}

/// Fit the encoder alone to the synthetic three-cluster set.
pub fn cmd_cluster(config: &RunConfig) -> Result<ClusterSummary, CliError> {
    let rng = RngStream::new(config.seed).split("cluster");
    let (x, labels) = three_cluster_data(config.cluster.points, &mut rng.split("data"));
    let igmm = crate::igmm_vae::IgmmConfig { obs_dim: x.cols(), architecture: Architecture::Dense, ..config.igmm.clone() };
    igmm.validate()?;
    let mut store = ParamStore::new();
    let model = IgmmVae::new(igmm, &mut store, &mut rng.split("init"))?;
    let report = train_clustering(&model, &mut store, &x, &labels, config.cluster.training, &mut rng.split("train"))?;
    let summary = ClusterSummary {
        command: "cluster",
        purity: report.purity,
        occupied: report.occupied,
        mean_weights: report.mean_weights,
    };
    let dir = echo_config(config)?;
    write(&dir.join("cluster.json"), serde_json::to_string(&summary).expect("plain record") + "\n")?;
    Ok(summary)
}

/// Render every metrics file as one seed of a shared experiment.
pub fn cmd_plot(metrics: &[PathBuf], out: &Path) -> Result<usize, CliError> {
    if metrics.is_empty() {
        return Err(CliError::Usage("plot needs at least one metrics file".into()));
    }
    let mut series = Vec::with_capacity(metrics.len());
    for path in metrics {
        series.push(Series::from_metrics(&path.display().to_string(), &read(path)?)?);
    }
    write(out, render_svg(&series))?;
    Ok(series.len())
}
