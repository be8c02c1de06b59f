use anyhow::Result;
use conpono_core::corpus::CorpusStats;
use conpono_core::evalprobe::{marker_analysis, read_probe_jsonl};
use conpono_core::manifest::RunManifest;

use super::probe::{read_predictions, test_split};
use crate::MarkersArgs;

/// Compares discourse-marker rates between the two models' disagreement
/// sets, weighted by training-corpus counts.
pub fn run(args: MarkersArgs) -> Result<()> {
    for (path, what) in [
        (&args.probe, "probe dataset"),
        (&args.preds_a, "prediction file A"),
        (&args.preds_b, "prediction file B"),
        (&args.stats, "corpus stats"),
    ] {
        super::require_exists(path, what)?;
    }
    let examples = test_split(&read_probe_jsonl(&args.probe)?);
    if examples.is_empty() {
        anyhow::bail!("probe dataset has no test-split examples");
    }
    let preds_a = read_predictions(&args.preds_a)?;
    let preds_b = read_predictions(&args.preds_b)?;
    let stats = CorpusStats::load(&args.stats)?;
    let table = marker_analysis(&examples, &preds_a, &preds_b, &stats)?;
    std::fs::write(
        &args.out,
        format!("{}\n", serde_json::to_string_pretty(&table)?),
    )?;

    let mut manifest = RunManifest::new("analyze-markers", None, "{}");
    for path in [&args.probe, &args.preds_a, &args.preds_b, &args.stats] {
        manifest.add_input(path)?;
    }
    manifest.add_output(&args.out);
    manifest.write_beside(&args.out)?;

    if table.no_disagreements {
        println!("no disagreements between the two prediction files");
    } else {
        println!(
            "A-correct/B-wrong: {} examples, weighted avg change {:?}",
            table.a_correct_b_wrong.num_examples, table.a_correct_b_wrong.weighted_avg_change
        );
        println!(
            "B-correct/A-wrong: {} examples, weighted avg change {:?}",
            table.b_correct_a_wrong.num_examples, table.b_correct_a_wrong.weighted_avg_change
        );
    }
    Ok(())
}
