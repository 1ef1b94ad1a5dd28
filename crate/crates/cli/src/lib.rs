//! Command suite for scoring, evaluating and reporting on object-erasure
//! results with the ReMOVE metric.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use remove_core::analysis::{Binning, CorrelationMethod};
use remove_core::encoders::{EncoderOptions, EncoderRegistry, MOCK_ENCODER};
use remove_core::{Error, MetricConfig, PatchEncoder};

pub mod commands;
pub mod evaluate;
pub mod report;

pub const EXIT_DEGENERATE_MASK: i32 = 3;
pub const EXIT_ENCODER: i32 = 4;
pub const EXIT_IO: i32 = 5;
pub const EXIT_INVALID: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "remove", version, about = "Reference-free evaluation of object erasure")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one edited image against its erase mask.
    Score(commands::ScoreArgs),
    /// Score every sample of a manifest, then write tables, curves and plots.
    Evaluate(evaluate::EvaluateArgs),
    /// Build a synthetic degradation corpus and its manifest.
    Generate(commands::GenerateArgs),
    /// Agreement of metric orderings with pairwise human preferences.
    Agreement(commands::AgreementArgs),
    /// Bin curves and plots from an existing records file.
    Plot(report::PlotArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Score(a) => commands::score(&a),
        Command::Evaluate(a) => evaluate::evaluate(&a).map(|_| ()),
        Command::Generate(a) => commands::generate(&a),
        Command::Agreement(a) => commands::agreement(&a),
        Command::Plot(a) => report::plot(&a),
    }
}

/// Process exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return 1;
    };
    match e.root() {
        Error::DegenerateMask(_) => EXIT_DEGENERATE_MASK,
        Error::EncoderFailure { .. } | Error::Load { .. } | Error::ContractViolation(_) => EXIT_ENCODER,
        Error::Io { .. } | Error::Image { .. } => EXIT_IO,
        Error::Config(_)
        | Error::Validation(_)
        | Error::Parse { .. }
        | Error::ReferenceRequired(_)
        | Error::UndefinedCorrelation(_) => EXIT_INVALID,
        _ => 1,
    }
}

/// Encoder selection and metric overrides shared by `score` and `evaluate`.
#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// Encoder id: `mock-pool` or one of the SAM image encoders (sam-vit-h, sam-vit-l, sam-vit-b).
    #[arg(long, default_value = "sam-vit-h")]
    pub encoder: String,
    /// Encoder checkpoint (file or model directory).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Directory holding checkpoints named after the encoder id.
    #[arg(long, env = "REMOVE_WEIGHTS_DIR")]
    pub weights_dir: Option<PathBuf>,
    /// Command line of the encoder inference process.
    #[arg(long)]
    pub backend_cmd: Option<String>,
    #[arg(long, default_value = "cpu")]
    pub device: String,
    /// JSON metric configuration used as the base for the flags below.
    #[arg(long)]
    pub metric_config: Option<PathBuf>,
    /// Score the whole image instead of a square crop around the mask.
    #[arg(long)]
    pub no_crop: bool,
    #[arg(long)]
    pub target_fraction: Option<f64>,
    #[arg(long)]
    pub patch_threshold: Option<f64>,
    #[arg(long)]
    pub input_side: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Mask pixels at or above this gray level count as set; by default only 0 and 255 are accepted.
    #[arg(long)]
    pub mask_threshold: Option<u8>,
}

impl MetricArgs {
    pub fn metric_config(&self) -> Result<MetricConfig> {
        let mut cfg = match &self.metric_config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str::<MetricConfig>(&text).map_err(|e| {
                    Error::Config(format!("{}: {e}", path.display()))
                })?
            }
            None => MetricConfig::default(),
        };
        if self.no_crop {
            cfg.use_crop = false;
        }
        if let Some(t) = self.target_fraction {
            cfg.target_mask_fraction = t;
        }
        if let Some(t) = self.patch_threshold {
            cfg.patch_mask_threshold = t;
        }
        if let Some(s) = self.input_side {
            cfg.input_side = s;
        }
        if let Some(p) = self.patch_size {
            cfg.patch_size = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn weights_path(&self) -> Option<PathBuf> {
        self.weights
            .clone()
            .or_else(|| self.weights_dir.as_ref().map(|d| d.join(&self.encoder)))
    }

    pub fn encoder_options(&self, cfg: &MetricConfig) -> EncoderOptions {
        EncoderOptions {
            input_side: cfg.input_side,
            patch_size: cfg.patch_size,
            weights: if self.encoder == MOCK_ENCODER { None } else { self.weights_path() },
            command: self.backend_cmd.clone(),
            device: self.device.clone(),
        }
    }

    pub fn build_encoder(&self, cfg: &MetricConfig) -> Result<Box<dyn PatchEncoder>> {
        let encoder = EncoderRegistry::with_builtins()
            .build(&self.encoder, &self.encoder_options(cfg))
            .with_context(|| format!("loading encoder `{}`", self.encoder))?;
        Ok(encoder)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    None,
    Mse,
    Lpips,
    CsNr,
    CsFr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Partition {
    MaskSize,
}

/// Curve and correlation options shared by `evaluate` and `plot`.
#[derive(Debug, Clone, Args)]
pub struct AnalysisArgs {
    #[arg(long, default_value_t = 20)]
    pub n_bins: usize,
    /// Reference metric used to sort samples; defaults to LPIPS, else MSE.
    #[arg(long)]
    pub sort_metric: Option<String>,
    #[arg(long)]
    pub partition: Option<Partition>,
    #[arg(long, value_enum, default_value = "equal-count")]
    pub binning: BinningArg,
    #[arg(long, value_enum, default_value = "pearson")]
    pub correlation: CorrelationArg,
    /// Also report the correlation between per-bin means.
    #[arg(long)]
    pub per_bin_rho: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BinningArg {
    EqualCount,
    EqualWidth,
}

impl From<BinningArg> for Binning {
    fn from(b: BinningArg) -> Self {
        match b {
            BinningArg::EqualCount => Binning::EqualCount,
            BinningArg::EqualWidth => Binning::EqualWidth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorrelationArg {
    Pearson,
    Spearman,
}

impl From<CorrelationArg> for CorrelationMethod {
    fn from(c: CorrelationArg) -> Self {
        match c {
            CorrelationArg::Pearson => CorrelationMethod::Pearson,
            CorrelationArg::Spearman => CorrelationMethod::Spearman,
        }
    }
}

/// Resolved settings of an `evaluate` run, written next to its records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub manifest: PathBuf,
    pub encoder_id: String,
    pub weights: Option<PathBuf>,
    pub metric: MetricConfig,
    pub ablation: bool,
    pub baselines: Vec<BaselineKind>,
    pub out_dir: PathBuf,
    pub workers: usize,
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    let out: Result<Vec<T>, _> = s.split(',').map(|v| v.trim().parse::<T>()).collect();
    match out {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => bail!(Error::Config(format!("cannot parse {what} list `{s}`"))),
    }
}
