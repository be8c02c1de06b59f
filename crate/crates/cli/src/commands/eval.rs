use anyhow::Result;
use conpono_core::encoder::checkpoint;
use conpono_core::manifest::{digest_file, RunManifest};
use conpono_core::sampler::{read_shards, ShardData, ShardMode};
use conpono_core::trainer::{evaluate_heldout_instances, evaluate_heldout_pairs};

use crate::EvalArgs;

/// Evaluates a checkpoint on every instance in the given shards: per-k
/// accuracy for contrastive shards, binary accuracy for NSP/BSO pairs.
pub fn run(args: EvalArgs) -> Result<()> {
    super::require_exists(&args.checkpoint, "checkpoint")?;
    super::require_exists(&args.heldout, "heldout shards directory")?;
    let (params, step, _) = checkpoint::load(&args.checkpoint)?;
    let (shard_config, data) = read_shards(&args.heldout)?;
    if shard_config.vocab_size != params.config.vocab_size {
        anyhow::bail!(
            "shards use vocab_size {} but the checkpoint was trained with {}",
            shard_config.vocab_size,
            params.config.vocab_size
        );
    }
    let record = match &data {
        ShardData::Conpono(instances) => {
            if shard_config.window.k_max != params.config.k_max {
                anyhow::bail!(
                    "shards use K={} but the checkpoint has K={}",
                    shard_config.window.k_max,
                    params.config.k_max
                );
            }
            evaluate_heldout_instances(&params, &shard_config.window, instances, step)?
        }
        ShardData::Pairs(pairs) => {
            evaluate_heldout_pairs(&params, &shard_config.window, pairs, step)?
        }
    };

    let per_k: serde_json::Map<String, serde_json::Value> = record
        .per_k
        .iter()
        .map(|(k, v)| (k.to_string(), serde_json::json!(v)))
        .collect();
    let out = serde_json::json!({
        "checkpoint": digest_file(&args.checkpoint)?,
        "mode": shard_config.mode.to_string(),
        "step": record.step,
        "num_instances": record.num_instances,
        "overall": record.overall,
        "chance": record.chance,
        "per_k": per_k,
    });
    std::fs::write(&args.out, format!("{}\n", serde_json::to_string_pretty(&out)?))?;

    let mut manifest = RunManifest::new("eval", None, "{}");
    manifest.add_input(&args.checkpoint)?;
    manifest.add_output(&args.out);
    manifest.write_beside(&args.out)?;
    println!(
        "accuracy {:.4} over {} instances (chance {:.4}); per-k written to {}",
        record.overall,
        record.num_instances,
        record.chance,
        args.out.display()
    );
    let _ = ShardMode::Conpono;
    Ok(())
}
