use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use delpath_core::{PenaltyMode, SearchConfig, TerminationMode};

#[derive(Debug, Parser)]
#[command(
    name = "delpath",
    version,
    about = "Extractive sentence compression by deletion-path search"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compress sentences and write their deletion paths.
    Compress(CompressArgs),
    /// Print per-token NLLs and the AvgPPL of one sentence.
    Score(ScoreArgs),
    /// Score predictions against references, or compress a dataset and score it.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Terminate,
    FullPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Penalty {
    SpanLength,
    CurrentLength,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Jsonl,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetFormat {
    Jsonl,
    Google,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum F1ModeArg {
    Multiset,
    Positional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggArg {
    JointMaskSum,
    IndependentMaskSum,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    /// terminate: stop when no deletion passes the threshold. full-path: keep deleting down to the length floor.
    #[arg(long, value_enum, default_value_t = Mode::Terminate)]
    pub mode: Mode,
    /// Threshold slope: a candidate passes when its ratio to the parent is at most 1 + alpha * ln(root length).
    #[arg(long, default_value_t = 0.04)]
    pub alpha: f64,
    /// Span-length penalty exponent.
    #[arg(long, default_value_t = 0.04)]
    pub beta: f64,
    /// Longest span removed in one step.
    #[arg(long, default_value_t = 3)]
    pub max_lookahead: usize,
    /// Multiplier on candidate AvgPPL: span_len^beta, parent_len^beta, or none.
    #[arg(long, value_enum, default_value_t = Penalty::SpanLength)]
    pub penalty: Penalty,
    /// Never delete this token (every occurrence). Repeatable.
    #[arg(long = "freeze", value_name = "TOKEN")]
    pub freeze: Vec<String>,
    /// Never delete the token at this 0-based position. Repeatable.
    #[arg(long = "freeze-index", value_name = "INDEX")]
    pub freeze_index: Vec<usize>,
    /// Fail a sentence when a --freeze token does not occur in it.
    #[arg(long)]
    pub strict_freeze: bool,
    /// Never shrink below ceil(min_cr * root length) tokens.
    #[arg(long)]
    pub min_cr: Option<f64>,
    /// Keep deleting past the threshold until at most max_cr * root length tokens remain.
    #[arg(long)]
    pub max_cr: Option<f64>,
    /// Never shrink below this many tokens.
    #[arg(long, default_value_t = 1)]
    pub min_tokens: usize,
    /// Stop after this many deletions.
    #[arg(long)]
    pub step_limit: Option<usize>,
}

impl SearchArgs {
    pub fn config(&self) -> SearchConfig {
        SearchConfig {
            alpha: self.alpha,
            beta: self.beta,
            max_lookahead: self.max_lookahead,
            penalty_mode: match self.penalty {
                Penalty::SpanLength => PenaltyMode::SpanLength,
                Penalty::CurrentLength => PenaltyMode::CurrentLength,
                Penalty::Off => PenaltyMode::Off,
            },
            termination_mode: match self.mode {
                Mode::Terminate => TerminationMode::Terminate,
                Mode::FullPath => TerminationMode::FullPath,
            },
            frozen_root_indices: BTreeSet::new(),
            min_cr: self.min_cr,
            max_cr: self.max_cr,
            min_tokens: self.min_tokens,
            step_limit: self.step_limit,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScorerArgs {
    /// Scoring server base URL. Falls back to $DELPATH_SCORER_URL when no scorer is given.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Built-in deterministic scorer: hash-context or zero.
    #[arg(long, value_name = "NAME")]
    pub fixture: Option<String>,
    /// JSON bigram table: {"unigram": {...}, "bigram": [[prev, tok, delta], ...], "default_unigram": x}.
    #[arg(long, value_name = "FILE")]
    pub bigram_table: Option<PathBuf>,
    /// Sentences per scoring request.
    #[arg(long, default_value_t = 64)]
    pub max_batch: usize,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    pub timeout: u64,
    /// Attempts per request, first try included.
    #[arg(long, default_value_t = 3)]
    pub retries: usize,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Do not lowercase input text.
    #[arg(long)]
    pub no_lowercase: bool,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    /// A single sentence to compress.
    #[arg(long, conflicts_with = "input")]
    pub text: Option<String>,
    /// File with one sentence per line, or JSONL objects with "text" or "tokens".
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Write here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Jsonl)]
    pub format: OutputFormat,
    /// Sentences compressed in parallel; 0 means one per CPU.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub tokens: InputArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub text: String,
    /// Print {"tokens", "nll", "avgppl"} instead of a table.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub tokens: InputArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// System outputs: JSONL with "id" and "prediction" (compress output also works).
    #[arg(long, requires = "references", conflicts_with = "dataset")]
    pub predictions: Option<PathBuf>,
    /// JSONL with "id", "source" and "references".
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// Compress this dataset in terminate mode, then evaluate.
    #[arg(long, conflicts_with = "references")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DatasetFormat::Jsonl)]
    pub dataset_format: DatasetFormat,
    /// Keep only the first N dataset records.
    #[arg(long)]
    pub first_n: Option<usize>,
    /// Write the compress records of an end-to-end run here.
    #[arg(long)]
    pub paths_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = F1ModeArg::Multiset)]
    pub f1_mode: F1ModeArg,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
    /// Refuse to run unless the server reports this word-piece aggregation.
    #[arg(long, value_enum)]
    pub expect_agg: Option<AggArg>,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub tokens: InputArgs,
}
