use anyhow::{Context, Result};
use conpono_core::corpus::{
    generate_synthetic_corpus, ingest_text, raw_paragraphs, write_corpus_jsonl, CorpusStats,
    SyntheticConfig, Vocabulary,
};
use conpono_core::manifest::RunManifest;

use super::sidecar;
use crate::IngestArgs;

/// Tokenizes text into corpus JSONL. The full frequency-ordered vocabulary
/// and exact corpus statistics are written as sidecars; the `vocab`
/// subcommand derives its fixed-size vocabulary from the former.
pub fn run(args: IngestArgs) -> Result<()> {
    let mut manifest = RunManifest::new(
        "ingest",
        Some(args.seed),
        &format!(
            "{{\"synthetic\":{},\"docs\":{},\"paragraphs\":{},\"doc_offset\":{}}}",
            args.synthetic, args.docs, args.paragraphs, args.doc_offset
        ),
    );
    let text = if args.synthetic {
        let docs = generate_synthetic_corpus(&SyntheticConfig {
            seed: args.seed,
            num_docs: args.docs,
            paragraphs_per_doc: args.paragraphs,
            sentences_min: args.min_sentences,
            sentences_max: args.max_sentences,
        })?;
        docs.join("\n===\n")
    } else {
        let mut parts = Vec::new();
        for path in &args.inputs {
            super::require_exists(path, "input file")?;
            manifest.add_input(path)?;
            parts.push(
                std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?,
            );
        }
        parts.join("\n===\n")
    };

    // Full vocabulary over every token, so corpus ids decode losslessly and
    // any smaller vocabulary is a rank prefix of this one.
    let paragraphs = raw_paragraphs(&text);
    let vocab = Vocabulary::build(paragraphs.iter().map(|p| p.as_str()), usize::MAX)?;
    let corpus = ingest_text(&text, &vocab, args.doc_offset);
    if corpus.documents.is_empty() {
        anyhow::bail!("no documents found in the input");
    }
    write_corpus_jsonl(&corpus, &args.out)?;
    let vocab_path = sidecar(&args.out, "vocab");
    vocab.save(&vocab_path)?;
    let stats = CorpusStats::compute(&corpus, &vocab);
    let stats_path = sidecar(&args.out, "stats");
    stats.save(&stats_path)?;

    manifest.add_output(&args.out);
    manifest.add_output(&vocab_path);
    manifest.add_output(&stats_path);
    manifest.write_beside(&args.out)?;
    println!(
        "ingested {} documents, {} paragraphs, full vocabulary {}",
        corpus.documents.len(),
        corpus.num_paragraphs(),
        vocab.size()
    );
    Ok(())
}
