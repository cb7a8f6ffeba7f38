mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spe_core::calibration::Family;
use spe_core::{MetricId, SpeError};

use config::RunConfig;

/// Label-free performance estimation for segmentation models.
#[derive(Parser, Debug)]
#[command(name = "spe", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score prediction masks against ground truth, matched by file name.
    Metrics(MetricsArgs),
    /// Collect (pseudo, real) pairs over a checkpoint series and fit the mapping.
    Calibrate(CalibrateArgs),
    /// Estimate real performance of a deployed checkpoint on unlabeled images.
    Estimate(EstimateArgs),
    /// Run the full pipeline on generated shapes and print MAE / Corr per metric.
    SynthDemo(DemoArgs),
    /// Reference plugin for protocol tests: majority vote over support labels.
    #[command(hide = true)]
    EchoPlugin { workdir: PathBuf },
}

#[derive(Args, Debug, Clone, Default)]
struct CommonArgs {
    /// TOML run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Metric to compute; repeat for several.
    #[arg(long = "metric")]
    metrics: Vec<MetricId>,
    #[arg(long)]
    support_size: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Reference segmenter command, split on whitespace.
    #[arg(long)]
    plugin_cmd: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "spe-out")]
    out: PathBuf,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig, SpeError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if !self.metrics.is_empty() {
            cfg.metrics = self.metrics.clone();
        }
        if let Some(s) = self.support_size {
            cfg.support_size = s;
        }
        if let Some(r) = self.repeats {
            cfg.n_repeats = r;
        }
        if let Some(cmd) = &self.plugin_cmd {
            let parts: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if parts.is_empty() {
                return Err(SpeError::Validation("--plugin-cmd is empty".into()));
            }
            cfg.plugin_cmd = Some(parts);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long = "metric")]
    metrics: Vec<MetricId>,
    /// Write per-metric CSVs and a summary here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    family: Option<Family>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Calibration artifact; repeat for several metrics.
    #[arg(long = "artifact")]
    artifacts: Vec<PathBuf>,
    /// Directory of unlabeled images (PNG).
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    #[arg(long)]
    checkpoint_locator: Option<String>,
    #[arg(long, default_value_t = 0)]
    checkpoint_epoch: u32,
    /// Synthetic runs: deploy the degradation level with this mean dice.
    #[arg(long)]
    deployed_quality: Option<f64>,
    #[arg(long)]
    allow_protocol_override: bool,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Run this many consecutive seeds starting at --seed.
    #[arg(long)]
    n_seeds: Option<usize>,
    #[arg(long)]
    family: Option<Family>,
}

fn exit_code(e: &SpeError) -> u8 {
    match e {
        SpeError::Validation(_)
        | SpeError::Ingestion { .. }
        | SpeError::Parse { .. }
        | SpeError::Fit(_)
        | SpeError::Domain(_) => 2,
        SpeError::UndefinedScore { .. } | SpeError::Undefined(_) => 3,
        SpeError::ArtifactMismatch(_) => 4,
        _ => 1,
    }
}

fn error_kind(e: &SpeError) -> &'static str {
    match e {
        SpeError::Ingestion { .. } => "ingestion",
        SpeError::Validation(_) => "validation",
        SpeError::Protocol(_) => "protocol",
        SpeError::Plugin { .. } => "plugin",
        SpeError::Reference { .. } => "reference",
        SpeError::UndefinedScore { .. } | SpeError::Undefined(_) => "undefined",
        SpeError::Fit(_) => "fit",
        SpeError::Domain(_) => "domain",
        SpeError::Harness(_) => "harness",
        SpeError::ArtifactMismatch(_) => "artifact-mismatch",
        SpeError::Parse { .. } => "parse",
        SpeError::Io(_) => "io",
    }
}

fn init_workers() -> Result<(), SpeError> {
    let Ok(value) = std::env::var("SPE_WORKERS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| SpeError::Validation(format!("SPE_WORKERS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| SpeError::Io(std::io::Error::other(e.to_string())))
}

fn run(cli: Cli) -> Result<(), SpeError> {
    init_workers()?;
    match cli.command {
        Command::Metrics(a) => commands::metrics(&a.pred, &a.gt, &a.metrics, a.out.as_deref()),
        Command::Calibrate(a) => {
            let mut cfg = a.common.resolve()?;
            if a.family.is_some() {
                cfg.family = a.family;
            }
            commands::calibrate(&cfg, &a.common.out)
        }
        Command::Estimate(a) => {
            let mut cfg = a.common.resolve()?;
            if !a.artifacts.is_empty() {
                cfg.estimate.artifacts = a.artifacts;
            }
            if a.unlabeled.is_some() {
                cfg.estimate.unlabeled_dir = a.unlabeled;
            }
            if let Some(locator) = a.checkpoint_locator {
                cfg.estimate.deployed = Some(spe_core::segmenter::CheckpointRef::new("deployed", a.checkpoint_epoch, locator));
            }
            if a.deployed_quality.is_some() {
                cfg.estimate.deployed_quality = a.deployed_quality;
            }
            cfg.estimate.allow_protocol_override |= a.allow_protocol_override;
            commands::estimate(&cfg, &a.common.out)
        }
        Command::SynthDemo(a) => {
            let mut cfg = a.common.resolve()?;
            if let Some(n) = a.n_seeds {
                cfg.n_seeds = n;
            }
            if a.family.is_some() {
                cfg.family = a.family;
            }
            cfg.validate()?;
            commands::synth_demo(&cfg, &a.common.out)
        }
        Command::EchoPlugin { workdir } => commands::echo_plugin(&workdir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", error_kind(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
