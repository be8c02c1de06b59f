use anyhow::{Context, Result};
use conpono_core::corpus::Vocabulary;
use conpono_core::manifest::RunManifest;

use super::sidecar;
use crate::VocabArgs;

/// Truncates the ingest-time full vocabulary to the requested size. Because
/// ingest orders ids by (count desc, token asc), taking the first `size`
/// entries matches building a size-limited vocabulary from the raw text.
pub fn run(args: VocabArgs) -> Result<()> {
    super::require_exists(&args.corpus, "corpus file")?;
    let full_path = sidecar(&args.corpus, "vocab");
    super::require_exists(&full_path, "full-vocabulary sidecar (run ingest first)")?;
    let full = Vocabulary::load(&full_path)
        .with_context(|| format!("loading {}", full_path.display()))?;
    let truncated = full.truncated(args.size)?;
    truncated.save(&args.out)?;

    let mut manifest = RunManifest::new("vocab", None, &format!("{{\"size\":{}}}", args.size));
    manifest.add_input(&args.corpus)?;
    manifest.add_input(&full_path)?;
    manifest.add_output(&args.out);
    manifest.write_beside(&args.out)?;
    println!(
        "vocabulary of {} entries written to {}",
        truncated.size(),
        args.out.display()
    );
    Ok(())
}
