//! `genex`: data construction, training, decoding, baselines and evaluation
//! as file-to-file subcommands.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use genex_core::GenexError;

#[derive(Parser, Debug)]
#[command(name = "genex", version, about = "Query-focused explanations for search results")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a subword vocabulary from triples.
    BuildVocab(BuildVocabArgs),
    /// Turn article sections into triples.
    BuildWiki(BuildWikiArgs),
    /// Turn anchor texts sharing a prefix into triples.
    BuildAnchors(BuildAnchorsArgs),
    /// Replace documents with query-biased summaries.
    Summarize(SummarizeArgs),
    /// Generate the synthetic key-value task.
    Synth(SynthArgs),
    /// Train a model, optionally resuming a checkpoint.
    Train(TrainArgs),
    /// Greedy-decode explanations with a trained model.
    Decode(DecodeArgs),
    /// Score predictions against gold explanations.
    Evaluate(EvaluateArgs),
    /// Explain with an unsupervised or perturbation baseline.
    Baseline(BaselineArgs),
    /// Compare backward-pass gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct BuildVocabArgs {
    /// Triples (JSONL); may repeat.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Target vocabulary size, specials included.
    #[arg(long, default_value_t = 8000)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BuildWikiArgs {
    /// Articles (JSONL of {title, sections: [{header, body}]}).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Header blocklist, one per line; replaces the default list.
    #[arg(long)]
    stop_headers: Option<PathBuf>,
    /// Count gate lengths in subword tokens of this vocabulary.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Write filtering counts here as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BuildAnchorsArgs {
    /// Anchor records (JSONL of {page, anchor}).
    #[arg(long)]
    anchors: PathBuf,
    /// Page texts (JSONL of {page, text}).
    #[arg(long)]
    pages: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Stopwords stripped from facet starts, one per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Words that disqualify a facet, one per line.
    #[arg(long)]
    blocklist: Option<PathBuf>,
    /// Condense pages to query-biased summaries of this many tokens.
    #[arg(long)]
    summary_cap: Option<usize>,
    /// Word vectors for summary similarity (word followed by floats per line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Summary length cap in tokens (at least 20).
    #[arg(long, default_value_t = 256)]
    cap: usize,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of triples.
    #[arg(long)]
    n: usize,
    /// Size of the generated word list.
    #[arg(long, default_value_t = 120)]
    words: usize,
    #[arg(long, default_value_t = 2)]
    fields: usize,
    #[arg(long, default_value_t = 1)]
    min_value_words: usize,
    #[arg(long, default_value_t = 2)]
    max_value_words: usize,
    #[arg(long, default_value_t = 3)]
    filler_words: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training triples (JSONL).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// `key = value` model and training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings; override the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Total epochs; overrides `epochs` from the config.
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Checkpoint written after every epoch.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch losses as JSONL.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Records with query and document (JSONL).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    /// Never emit a query token.
    #[arg(long)]
    ban_query: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Comma-separated subset of bleu1, bleu2, rouge1, rouge2, rougeL.
    #[arg(long, default_value = "bleu1,bleu2,rouge1,rouge2,rougeL")]
    metrics: String,
    /// Second system for a paired t-test against `--pred`.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-sample scores as TSV.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Textrank,
    TsTextrank,
    Lime,
    Sensitivity,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(value_enum)]
    method: Method,
    /// Records with query and document (JSONL).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Full term score lists as JSONL.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Documents for TF.IDF statistics; defaults to the input documents.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Keywords kept by the graph rankers.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Co-occurrence window of the graph rankers.
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// Perturbed samples per document for LIME.
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Model settings; without it every variant of the tiny model is checked.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Elements probed per tensor; all when omitted.
    #[arg(long)]
    per_tensor: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-6)]
    atol: f64,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include the synthetic learning runs (minutes).
    #[arg(long)]
    full: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(GenexError),
    /// A check ran and failed; already reported.
    Failed(String),
}

impl From<GenexError> for CliError {
    fn from(e: GenexError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                GenexError::NonFinite(_)
                | GenexError::EmptyAttentionRow { .. }
                | GenexError::NonScalarLoss(_)
                | GenexError::Shape { .. }
                | GenexError::Index { .. } => 3,
                _ => 2,
            },
            CliError::Failed(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads as usize)
        .build_global()
    {
        eprintln!("error: cannot start thread pool: {e}");
        return ExitCode::from(1);
    }
    match commands::run(cli.command, cli.seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
