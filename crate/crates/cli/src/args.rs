use std::path::PathBuf;

use attn_align::calibration::AlignmentMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "attn-align",
    version,
    about = "Softmax temperature alignment for length extrapolation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Random seed; falls back to ATTN_ALIGN_SEED, then 0.
    #[arg(long, env = "ATTN_ALIGN_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

fn parse_mode(s: &str) -> Result<AlignmentMode, String> {
    s.parse().map_err(|e: attn_align::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grid-search the extrapolation temperature on a model.
    Calibrate(CalibrateArgs),
    /// Closed-form temperatures per extrapolation length.
    PredictTau(PredictArgs),
    /// Average attention statistics and Gaussian fits per length.
    Analyze(AnalyzeArgs),
    /// Monte-Carlo verification of the closed-form approximations.
    Oracle(OracleArgs),
    /// Needle-attention curves with and without temperature alignment.
    Demo(DemoArgs),
    /// Relative-position bias profile of one head.
    BucketTable(BucketArgs),
    /// QQ points of an average logit vector or Gaussian samples.
    Qq(QqArgs),
    /// Write a freshly initialized toy encoder.
    Init(InitArgs),
    /// Write token sequences or synthetic tasks as JSON lines.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub short_seqs: PathBuf,
    #[arg(long)]
    pub long_seqs: PathBuf,
    /// max or ent
    #[arg(long, value_parser = parse_mode)]
    pub mode: AlignmentMode,
    /// Also try the two half-step neighbours of the winning grid point.
    #[arg(long)]
    pub refine: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub l_tr: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    /// Sigma of the average logit vector, used at every length.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Training-length sigma when it differs from --sigma.
    #[arg(long)]
    pub sigma_tr: Option<f64>,
    #[arg(long)]
    pub pmax_tr: Option<f64>,
    /// Largest training logit; gives p_max_tr through the Gaussian model
    /// when --pmax-tr is absent.
    #[arg(long)]
    pub lmax: Option<f64>,
    /// CSV written by `analyze`; supplies per-length fits.
    #[arg(long)]
    pub analysis: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sequence files; sequences are grouped by length.
    #[arg(long = "seqs")]
    pub seqs: Vec<PathBuf>,
    #[arg(long)]
    pub short_seqs: Option<PathBuf>,
    #[arg(long)]
    pub long_seqs: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Fit sigma and l_max over every layer instead of layer 0.
    #[arg(long)]
    pub all_layers: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    /// Test hook: use sigma^2 instead of sigma^2 / 2 in the entropy formula.
    #[arg(long, hide = true)]
    pub sabotage_entropy: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 4.0)]
    pub gap: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// First entry is the training length.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "512,1024,2048,4096,8192,15000"
    )]
    pub lengths: Vec<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BucketArgs {
    /// Model or bucket-table JSON with a `relative_attention_bias` key.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub head: usize,
    /// Query position m.
    #[arg(long)]
    pub query: usize,
    #[arg(long)]
    pub length: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct QqArgs {
    /// With --seqs, use the layer-0 average logit vector of this model.
    #[arg(long, requires = "seqs")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub seqs: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 16)]
    pub d_kv: usize,
    #[arg(long, default_value_t = 256)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 256)]
    pub vocab: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Random,
    Passkey,
    Lines,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value_t = GenKind::Random)]
    pub kind: GenKind,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Sequence length (random), junk length (passkey) or line count (lines).
    #[arg(long)]
    pub length: usize,
    #[arg(long, default_value_t = 256)]
    pub vocab: usize,
    #[arg(long, default_value_t = 68_934)]
    pub passkey: u64,
    #[command(flatten)]
    pub common: Common,
}
