//! Pipeline entry point: ingest -> vocab -> examples -> train -> eval ->
//! probe -> analyze-markers -> report.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "conpono", version, about = "Inter-sentence contrastive pretraining at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest raw text (or generate a synthetic corpus) into tokenized JSONL
    Ingest(IngestArgs),
    /// Derive a fixed-size vocabulary from an ingested corpus
    Vocab(VocabArgs),
    /// Sample training instances into shards
    Examples(ExamplesArgs),
    /// Train an encoder on shards (optionally over an ablation grid)
    Train(TrainArgs),
    /// Per-distance accuracy of a checkpoint on held-out shards
    Eval(EvalArgs),
    /// Frozen-encoder probes (SP/BSO/DC) against a corpus
    Probe(ProbeArgs),
    /// Discourse-marker analysis over two models' prediction files
    AnalyzeMarkers(MarkersArgs),
    /// Summary tables and plot-ready CSVs for a finished run
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Input text files (documents separated by ===, paragraphs by blank lines)
    #[arg(long = "in", num_args = 1.., required_unless_present = "synthetic")]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Generate a synthetic corpus instead of reading files
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 100)]
    docs: usize,
    #[arg(long, default_value_t = 3)]
    paragraphs: usize,
    #[arg(long, default_value_t = 8)]
    min_sentences: usize,
    #[arg(long, default_value_t = 16)]
    max_sentences: usize,
    /// First doc_id to assign (lets a probe corpus stay disjoint from training)
    #[arg(long, default_value_t = 0)]
    doc_offset: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct VocabArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExamplesArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "K", default_value_t = 4)]
    k_max: usize,
    #[arg(long, default_value_t = 4)]
    anchor_len: usize,
    #[arg(long, default_value_t = 3)]
    target_len: usize,
    #[arg(long, default_value_t = 4)]
    ks_per_paragraph: usize,
    #[arg(long, default_value_t = 3)]
    num_hard: usize,
    #[arg(long, default_value_t = 28)]
    num_random: usize,
    #[arg(long, default_value_t = 0.15)]
    mask_rate: f64,
    #[arg(long, default_value_t = 128)]
    max_seq: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// conpono, nsp or bso
    #[arg(long, default_value = "conpono")]
    mode: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat JSON config; unknown keys are errors
    #[arg(long)]
    config: PathBuf,
    #[arg(long, required_unless_present = "grid")]
    shards: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Ablation grid file; entries override the base config
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Corpus for grid mode (shards are generated per entry)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Vocabulary for grid mode
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    heldout: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated subset of sp,bso,dc
    #[arg(long, default_value = "sp,bso,dc")]
    tasks: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct MarkersArgs {
    /// Probe dataset JSONL (test split is analyzed)
    #[arg(long)]
    probe: PathBuf,
    #[arg(long)]
    preds_a: PathBuf,
    #[arg(long)]
    preds_b: PathBuf,
    /// Corpus stats sidecar from ingest
    #[arg(long)]
    stats: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Output directory (default: <run>/report)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(args) => commands::ingest::run(args),
        Command::Vocab(args) => commands::vocab::run(args),
        Command::Examples(args) => commands::examples::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Probe(args) => commands::probe::run(args),
        Command::AnalyzeMarkers(args) => commands::markers::run(args),
        Command::Report(args) => commands::report::run(args),
    };
    if let Err(e) = result {
        eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
        std::process::exit(1);
    }
}
