use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "sstaf",
    version,
    about = "Motor-imagery EEG decoding with spatial-spectral-temporal attention"
)]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Full pipeline configuration; stage flags and `--config` files override it.
    #[arg(long, global = true)]
    pub pipeline: Option<PathBuf>,

    /// One seed for splitting, initialization, shuffling and synthesis.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse EDF recordings into a conditioned epoch store.
    Ingest(IngestArgs),
    /// Validate and copy an externally produced epoch store.
    ImportEpochs(ImportArgs),
    /// Apply band-pass, notch and common average reference to an epoch store.
    Preprocess(PreprocessArgs),
    /// Compute STFT power features for an epoch store.
    Features(FeaturesArgs),
    /// Generate a synthetic motor-imagery epoch store.
    Synth(SynthArgs),
    /// Train one model and write its checkpoint.
    Train(TrainArgs),
    /// Cross-validate the model.
    Eval(EvalArgs),
    /// Cross-validate an ablated model variant.
    Ablate(AblateArgs),
    /// Write spectral and spatial attention weights as CSV.
    ExportAttention(ExportAttentionArgs),
    /// Write per-channel mean amplitudes of epochs as CSV.
    ExportTopo(ExportTopoArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Dataset {
    Eegmmidb,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum, default_value = "eegmmidb")]
    pub dataset: Dataset,
    /// Directory searched recursively for SxxxRyy.edf files.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Ingestion settings (runs, label map, epoch length).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Store unconditioned epochs.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also run the conditioning chain.
    #[arg(long)]
    pub preprocess: bool,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Filter settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_fft: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    #[arg(long)]
    pub log_power: bool,
    /// Z-score the epochs with these statistics (a `stats.json` from `train`).
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub trials_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelOptions {
    /// Training settings.
    #[arg(long = "train-config")]
    pub train_config: Option<PathBuf>,
    /// Architecture settings.
    #[arg(long = "model-config")]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Subject split: a fold `{train_subjects, test_subjects}` or a plan with `--fold`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    /// Training settings (alias of `--train-config`).
    #[arg(long, conflicts_with = "train_config")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelOptions,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Kfold,
    Loso,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Split epochs instead of subjects; results are not subject-independent.
    #[arg(long)]
    pub leaky_split: bool,
    #[command(flatten)]
    pub model: ModelOptions,
    /// Report file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also save every fold's model below this directory.
    #[arg(long)]
    pub save_models: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cv: CvArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// full, no-spectral, no-spatial, no-transformer or no-attention.
    #[arg(long)]
    pub variant: String,
    #[command(flatten)]
    pub cv: CvArgs,
}

#[derive(Debug, Args)]
pub struct ExportAttentionArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Output directory for spectral.csv, spatial.csv and channel_means.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch indices to export; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub epochs: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ExportTopoArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// CSV file.
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch indices to export; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub segments: Vec<usize>,
    /// Condition the epochs before averaging.
    #[arg(long)]
    pub preprocessed: bool,
}
