//! `limo`: synthetic data, feature extraction, training, indexing, search,
//! evaluation, benchmarking and explanation from the command line.
//!
//! Every successful command prints one JSON summary line on stdout. Logs go
//! to stderr. Exit codes: 0 success, 2 usage, 3 bad data, 4 internal or I/O.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use limo_core::index::{Direction, StorageMode};

#[derive(Debug, Parser)]
#[command(name = "limo", version, about = "Text-motion retrieval over joint-angle images")]
struct Cli {
    /// Raise log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic paired corpus (motions + captions).
    Synth(SynthArgs),
    /// Extract joint-angle features from a motion file.
    Extract(ExtractArgs),
    /// Render a Motion Image from a motion or feature file.
    Image(ImageArgs),
    /// Train the toy encoders on a synthetic corpus.
    Train(TrainArgs),
    /// Encode one split of a corpus into a float32 gallery index.
    Index(IndexArgs),
    /// Derive a PQ or binary index from a float32 index.
    Compress(CompressArgs),
    /// Search an index with a caption or a motion.
    Query(QueryArgs),
    /// Recall@K and median rank for a split or for precomputed rankings.
    Eval(EvalArgs),
    /// Measure query latency against an index.
    Bench(BenchArgs),
    /// Interaction map of a caption against a motion.
    Explain(ExplainArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DirectionArg {
    T2m,
    M2t,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::T2m => Direction::T2M,
            DirectionArg::M2t => Direction::M2T,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Float32,
    Pq,
    Binary,
}

impl From<ModeArg> for StorageMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Float32 => StorageMode::Float32,
            ModeArg::Pq => StorageMode::Pq,
            ModeArg::Binary => StorageMode::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct SkeletonArg {
    /// Skeleton definition JSON; the bundled 22-joint skeleton by default.
    #[arg(long)]
    skeleton: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    train: usize,
    #[arg(long, default_value_t = 50)]
    val: usize,
    #[arg(long, default_value_t = 50)]
    test: usize,
    #[command(flatten)]
    skeleton: SkeletonArg,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Motion JSON.
    #[arg(long)]
    input: PathBuf,
    /// `.csv` for text, anything else for the binary feature format.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    skeleton: SkeletonArg,
}

#[derive(Debug, Args)]
struct ImageArgs {
    /// Motion JSON, feature CSV or binary feature file.
    #[arg(long)]
    input: PathBuf,
    /// `.png` for an 8-bit preview, anything else for raw floats.
    #[arg(long)]
    out: PathBuf,
    /// Take part projections from a trained model directory.
    #[arg(long, conflicts_with = "seed")]
    model: Option<PathBuf>,
    /// Seed for freshly initialized part projections.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    skeleton: SkeletonArg,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Model directory to write.
    #[arg(long)]
    out: PathBuf,
    /// TOML or JSON training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    lambda_mlm: Option<f64>,
    #[arg(long)]
    mask_rate: Option<f64>,
    #[command(flatten)]
    skeleton: SkeletonArg,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_enum, default_value = "t2m")]
    direction: DirectionArg,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    skeleton: SkeletonArg,
}

#[derive(Debug, Args)]
struct CompressArgs {
    /// Float32 index to derive from.
    #[arg(long)]
    index: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    out: PathBuf,
    /// Codebook training seed; required for PQ.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = limo_core::index::DEFAULT_SUBSPACES)]
    subspaces: usize,
    #[arg(long, default_value_t = limo_core::index::DEFAULT_BITS)]
    bits: u32,
    #[arg(long, default_value_t = limo_core::index::DEFAULT_ITERS)]
    iters: usize,
    /// Gallery rows sampled to train the codebook.
    #[arg(long, default_value_t = limo_core::index::DEFAULT_TRAIN_ROWS)]
    train_rows: usize,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Caption to search a motion gallery with.
    #[arg(long, required_unless_present = "motion", conflicts_with = "motion")]
    text: Option<String>,
    /// Motion JSON to search a caption gallery with.
    #[arg(long)]
    motion: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    skeleton: SkeletonArg,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Precomputed rankings: `{"direction", "queries": [{"ranking", "relevant"}]}`.
    #[arg(long, conflicts_with_all = ["data", "model", "index"])]
    rankings: Option<PathBuf>,
    #[arg(long, requires = "model")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    model: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Evaluate this index (any mode) instead of exact search in both
    /// directions.
    #[arg(long, requires = "data")]
    index: Option<PathBuf>,
    /// Direction of `--index`.
    #[arg(long, value_enum, default_value = "t2m")]
    direction: DirectionArg,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,5,10")]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Report file; the summary line always carries the numbers too.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    skeleton: SkeletonArg,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Dataset whose split supplies the queries.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_enum, default_value = "t2m")]
    direction: DirectionArg,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    /// CSV file for the latency row.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    skeleton: SkeletonArg,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    text: String,
    /// Motion JSON.
    #[arg(long)]
    motion: PathBuf,
    /// Grid output: `.csv`, `.pgm` or `.png` (images get a `.json` sidecar).
    #[arg(long)]
    out: PathBuf,
    /// Also write one unaggregated CSV heatmap per token into this directory.
    #[arg(long)]
    token_maps: Option<PathBuf>,
    #[command(flatten)]
    skeleton: SkeletonArg,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("LIMO_LOG")
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    let result = commands::configure_threads().and_then(|()| commands::run(cli.command));
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
