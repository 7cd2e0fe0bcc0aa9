//! Command-line surface.

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gazeload::dataset::{InputMode, SplitMode, WindowConfig};
use gazeload::ivt::IvtConfig;
use gazeload::mlp::MlpConfig;
use gazeload::preprocess::{NormalizeScope, PreprocessConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "gazeload", version, about = "Gaze-based cognitive-load classification pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort (one CSV + manifest per participant)
    Synth(SynthArgs),
    /// Denoise and normalize the pupil channels of one session
    Preprocess(PreprocessArgs),
    /// Detect fixations in one session
    Fixations(FixationsArgs),
    /// Build windowed train/test datasets from a session directory
    Dataset(DatasetArgs),
    /// Train the MLP on a dataset file
    TrainMlp(TrainMlpArgs),
    /// Grid-search and train the random forest on a dataset file
    TrainRf(TrainRfArgs),
    /// Evaluate one or more models on a test dataset
    Evaluate(EvaluateArgs),
    /// Run the streaming inference service
    Serve(ServeArgs),
    /// Replay a session through a running service
    Stream(StreamArgs),
    /// Run the whole chain and write models and reports
    Pipeline(PipelineArgs),
    /// Re-execute a run from its manifest
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
pub enum ScopeArg {
    Global,
    PerSession,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
pub enum ModeArg {
    Flatten,
    Summary,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
pub enum SplitArg {
    Window,
    Subject,
}

#[derive(Debug, Clone, Args)]
pub struct PreArgs {
    /// Low-pass cutoff for the pupil channels, Hz
    #[arg(long, default_value_t = 4.0)]
    pub cutoff_hz: f64,
    /// Min-max normalization scope
    #[arg(long, value_enum, default_value_t = ScopeArg::Global)]
    pub normalize: ScopeArg,
    /// Longest invalid run that is interpolated, ms
    #[arg(long, default_value_t = 500.0)]
    pub max_interp_gap_ms: f64,
}

impl PreArgs {
    pub fn config(&self) -> PreprocessConfig {
        PreprocessConfig {
            cutoff_hz: self.cutoff_hz,
            normalize_scope: match self.normalize {
                ScopeArg::Global => NormalizeScope::Global,
                ScopeArg::PerSession => NormalizeScope::PerSession,
            },
            max_interp_gap_ms: self.max_interp_gap_ms,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct IvtArgs {
    /// Velocity threshold, deg/s
    #[arg(long, default_value_t = 30.0)]
    pub ivt_threshold: f64,
    #[arg(long, default_value_t = 60.0)]
    pub min_fixation_ms: f64,
    /// Merge fixations separated by less than this, ms (0 disables)
    #[arg(long, default_value_t = 75.0)]
    pub max_gap_ms: f64,
}

impl IvtArgs {
    pub fn config(&self) -> IvtConfig {
        IvtConfig {
            velocity_threshold_deg_s: self.ivt_threshold,
            min_fixation_ms: self.min_fixation_ms,
            max_gap_ms: self.max_gap_ms,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct WindowArgs {
    #[arg(long, default_value_t = 2000)]
    pub window_len: usize,
    #[arg(long, default_value_t = 500)]
    pub stride: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Flatten)]
    pub input_mode: ModeArg,
}

impl WindowArgs {
    pub fn config(&self) -> WindowConfig {
        WindowConfig {
            window_len: self.window_len,
            stride: self.stride,
            input_mode: match self.input_mode {
                ModeArg::Flatten => InputMode::Flatten,
                ModeArg::Summary => InputMode::Summary,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[arg(long, value_enum, default_value_t = SplitArg::Window)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}

impl SplitArgs {
    pub fn mode(&self) -> SplitMode {
        match self.split {
            SplitArg::Window => SplitMode::WindowRandom,
            SplitArg::Subject => SplitMode::SubjectWise,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MlpArgs {
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.00001)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    /// Hidden layer widths, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [256, 128, 64, 32, 16])]
    pub hidden: Vec<usize>,
}

impl MlpArgs {
    pub fn config(&self) -> MlpConfig {
        MlpConfig {
            hidden_sizes: self.hidden.clone(),
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch,
            ..MlpConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RfArgs {
    /// JSON file with the hyperparameter grid (default: built-in grid)
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CohortArgs {
    #[arg(long, default_value_t = 10)]
    pub n_low: usize,
    #[arg(long, default_value_t = 10)]
    pub n_high: usize,
    /// Multiplier on the class effects (0 = indistinguishable classes)
    #[arg(long, default_value_t = 1.0)]
    pub effect: f64,
    #[arg(long, default_value_t = 120.0)]
    pub duration_s: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SessionInput {
    /// Gaze CSV
    #[arg(long = "in")]
    pub input: PathBuf,
    /// key=value manifest
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub session: SessionInput,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pre: PreArgs,
}

#[derive(Debug, Args)]
pub struct FixationsArgs {
    #[command(flatten)]
    pub session: SessionInput,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pre: PreArgs,
    #[command(flatten)]
    pub ivt: IvtArgs,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Directory of <id>.csv + <id>.manifest pairs
    #[arg(long)]
    pub in_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub pre: PreArgs,
    #[command(flatten)]
    pub ivt: IvtArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainMlpArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub mlp: MlpArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainRfArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub rf: RfArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model file (.glmn or .glrf); repeat for several
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    /// Report CSV path (text table goes to stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// MLP decision threshold
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Stream settings written by `dataset` or `pipeline` (stream.json)
    #[arg(long)]
    pub stream_config: Option<PathBuf>,
    /// NDJSON stream socket address
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub listen: SocketAddr,
    /// Also serve the HTTP API on this address
    #[arg(long)]
    pub http: Option<SocketAddr>,
    /// Serve a single session over stdin/stdout instead of sockets
    #[arg(long)]
    pub pipe: bool,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub ivt: IvtArgs,
    #[arg(long, default_value_t = 4.0)]
    pub cutoff_hz: f64,
    #[arg(long, default_value_t = 200.0)]
    pub sampling_hz: f64,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[command(flatten)]
    pub session: SessionInput,
    /// Service stream address
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub connect: String,
    /// NDJSON output (default stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replay rate in samples/s; 0 sends as fast as possible
    #[arg(long, default_value_t = 0.0)]
    pub rate_hz: f64,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Generate a synthetic cohort instead of reading --in-dir
    #[arg(long, conflicts_with = "in_dir")]
    pub synthetic: bool,
    #[arg(long)]
    pub in_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[command(flatten)]
    pub pre: PreArgs,
    #[command(flatten)]
    pub ivt: IvtArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub mlp: MlpArgs,
    #[command(flatten)]
    pub rf: RfArgs,
    /// Also write the train/test datasets
    #[arg(long)]
    pub keep_datasets: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    /// run_manifest.json or <output>.run.json
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded --out / --out-dir
    #[arg(long)]
    pub redirect: Option<PathBuf>,
}
