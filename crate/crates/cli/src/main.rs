//! `gbc`: score, rank, evaluate and ablate transferability metrics.
//!
//! Exit codes: 0 success, 1 data or validation error, 2 usage error.

mod commands;
mod inputs;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gbc_core::config::{Metric, MetricConfig, PairSum, Task};
use gbc_core::sampler::SamplingStrategy;
use gbc_core::CovarianceMode;

#[derive(Parser)]
#[command(name = "gbc", version, about = "Transferability estimation with Gaussian Bhattacharyya coefficients")]
struct Cli {
    /// Directory for output files.
    #[arg(long, global = true, env = "GBC_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score one target embedding set with one metric.
    Score(ScoreArgs),
    /// Score every entry of a manifest and list them best first.
    Rank(RankArgs),
    /// Correlate scores with reference accuracies.
    Evaluate(EvaluateArgs),
    /// Evaluate GBC over a grid of covariance modes and PCA widths.
    Ablate(AblateArgs),
    /// Generate a synthetic scenario with its analytic oracle values.
    Synth(SynthArgs),
}

/// Metric configuration flags. Unset flags keep the manifest (or default) value.
#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    #[arg(long)]
    pub pca_dim: Option<usize>,
    #[arg(long, value_name = "full|diagonal|spherical")]
    pub covariance: Option<CovarianceMode>,
    #[arg(long)]
    pub var_floor: Option<f64>,
    /// Count each class pair in both orders (doubles GBC).
    #[arg(long)]
    pub ordered_pairs: bool,
    /// Master seed; every random component derives its stream from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Observations sampled per image (segmentation).
    #[arg(long)]
    pub pixels_per_image: Option<usize>,
    #[arg(long, value_name = "class-balanced|uniform", value_parser = parse_strategy)]
    pub sampling: Option<SamplingStrategy>,
}

fn parse_strategy(s: &str) -> Result<SamplingStrategy, String> {
    match s.to_ascii_lowercase().as_str() {
        "class-balanced" => Ok(SamplingStrategy::ClassBalanced),
        "uniform" => Ok(SamplingStrategy::Uniform),
        _ => Err(format!("unknown sampling strategy {s:?}")),
    }
}

impl ConfigArgs {
    pub fn apply(&self, base: &MetricConfig) -> MetricConfig {
        let mut cfg = base.clone();
        if let Some(d) = self.pca_dim {
            cfg.pca_dim = d;
        }
        if let Some(m) = self.covariance {
            cfg.covariance_mode = m;
        }
        if let Some(f) = self.var_floor {
            cfg.var_floor = f;
        }
        if self.ordered_pairs {
            cfg.pair_sum = PairSum::Ordered;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(sp) = cfg.sampler.as_mut() {
            if let Some(p) = self.pixels_per_image {
                sp.pixels_per_image = p;
            }
            if let Some(s) = self.sampling {
                sp.strategy = s;
            }
            if let Some(seed) = self.seed {
                sp.seed = seed;
            }
        }
        cfg
    }
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub metric: Metric,
    /// EMBD file, or CSV with inline labels.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Source-head predictions (PRED), required by LEEP.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Source-domain embeddings, required by IDS.
    #[arg(long)]
    pub source_embeddings: Option<PathBuf>,
    #[arg(long, default_value = "classification")]
    pub task: Task,
    /// Pixels per image in a segmentation dump.
    #[arg(long)]
    pub image_pixels: Option<usize>,
    /// Directory of cached pixel selections (PSEL), reused across runs.
    #[arg(long)]
    pub selection_cache: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Result file; defaults to `<out-dir>/score-<metric>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RankArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overrides the manifest's metric.
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub selection_cache: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// One or more manifests with reference accuracies.
    #[arg(long, required = true, num_args = 1..)]
    pub manifest: Vec<PathBuf>,
    /// Metrics to evaluate (comma separated); defaults to each manifest's metric.
    #[arg(long, value_delimiter = ',')]
    pub metric: Vec<Metric>,
    #[arg(long)]
    pub selection_cache: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub manifest: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "full,diagonal,spherical")]
    pub modes: Vec<CovarianceMode>,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub selection_cache: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Scenario TOML file.
    #[arg(long)]
    pub spec: PathBuf,
    /// Fresh samples for the Bayes error and overlap estimates.
    #[arg(long, default_value_t = 200_000)]
    pub mc_samples: usize,
}

/// Failure with its exit code.
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<gbc_core::Error> for CliError {
    fn from(e: gbc_core::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_dir = cli.out_dir;
    let result = match cli.command {
        Command::Score(a) => commands::score(&a, &out_dir),
        Command::Rank(a) => commands::rank(&a, &out_dir),
        Command::Evaluate(a) => commands::evaluate(&a, &out_dir),
        Command::Ablate(a) => commands::ablate(&a, &out_dir),
        Command::Synth(a) => commands::synth(&a, &out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
