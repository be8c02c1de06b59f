use anyhow::Result;
use conpono_core::corpus::{read_corpus_jsonl, Vocabulary};
use conpono_core::manifest::RunManifest;
use conpono_core::sampler::{generate_shards, write_shards, ShardMode, WindowConfig};

use crate::ExamplesArgs;

pub fn parse_mode(s: &str) -> Result<ShardMode> {
    match s {
        "conpono" => Ok(ShardMode::Conpono),
        "nsp" => Ok(ShardMode::Nsp),
        "bso" => Ok(ShardMode::Bso),
        other => anyhow::bail!("unknown sampling mode {other:?}; expected conpono, nsp or bso"),
    }
}

pub fn run(args: ExamplesArgs) -> Result<()> {
    super::require_exists(&args.corpus, "corpus file")?;
    super::require_exists(&args.vocab, "vocabulary file")?;
    let mode = parse_mode(&args.mode)?;
    let window = WindowConfig {
        k_max: args.k_max,
        anchor_len: args.anchor_len,
        target_len: args.target_len,
        ks_per_paragraph: args.ks_per_paragraph,
        num_hard: args.num_hard,
        num_random: args.num_random,
        mask_rate: args.mask_rate,
        max_seq: args.max_seq,
    };
    window.validate()?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let mut corpus = read_corpus_jsonl(&args.corpus)?;
    corpus.clamp_to_vocab(vocab.size());

    let data = generate_shards(&corpus, &window, mode, args.seed, vocab.size())?;
    if data.is_empty() {
        anyhow::bail!(
            "no instances generated; paragraphs may be shorter than anchor_len + target_len + 1"
        );
    }
    write_shards(&args.out, &data, &window, mode, args.seed, vocab.size())?;

    let mut manifest = RunManifest::new(
        "examples",
        Some(args.seed),
        &serde_json::to_string(&window)?,
    );
    manifest.add_input(&args.corpus)?;
    manifest.add_input(&args.vocab)?;
    manifest.add_output(&args.out);
    manifest.write_beside(&args.out)?;
    println!(
        "wrote {} {mode} instances to {}",
        data.len(),
        args.out.display()
    );
    Ok(())
}
