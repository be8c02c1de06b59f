use std::path::Path;

use anyhow::{Context, Result};
use conpono_core::corpus::{read_corpus_jsonl, Vocabulary};
use conpono_core::manifest::RunManifest;
use conpono_core::sampler::{generate_shards, read_shards, write_shards};
use conpono_core::trainer::flat::FlatTrainConfig;
use conpono_core::trainer::train;
use serde::Deserialize;

use crate::TrainArgs;

fn parse_flat(value: &serde_json::Value) -> Result<FlatTrainConfig> {
    serde_json::from_value(value.clone()).context("invalid training config")
}

pub fn run(args: TrainArgs) -> Result<()> {
    super::require_exists(&args.config, "config file")?;
    let base_value: serde_json::Value = super::read_json(&args.config, "training config")?;
    parse_flat(&base_value)?; // reject unknown keys up front

    match &args.grid {
        None => {
            let shards_dir = args.shards.as_ref().expect("clap enforces --shards");
            super::require_exists(shards_dir, "shards directory")?;
            let (shard_config, data) = read_shards(shards_dir)?;
            let config = parse_flat(&base_value)?.resolve(Some(&shard_config))?;
            let outcome = train(&config, &shard_config, &data, Some(&args.out))?;
            write_train_manifest(&args, &base_value, config.seed)?;
            let last = outcome.run_log.steps.last().expect("at least one step");
            println!(
                "trained {} steps; final loss {:.4}; checkpoints in {}",
                last.step + 1,
                last.loss_total,
                args.out.display()
            );
            if let Some(held) = &outcome.final_heldout {
                println!(
                    "heldout: overall {:.4} over {} instances (chance {:.4})",
                    held.overall, held.num_instances, held.chance
                );
            }
            Ok(())
        }
        Some(grid_path) => run_grid(&args, &base_value, grid_path),
    }
}

#[derive(Deserialize)]
struct GridFile {
    entries: Vec<serde_json::Value>,
}

/// Runs every grid entry: entry keys override the base config, shards are
/// generated per entry from the given corpus and vocabulary, and one
/// summary row is appended per run.
fn run_grid(args: &TrainArgs, base: &serde_json::Value, grid_path: &Path) -> Result<()> {
    super::require_exists(grid_path, "grid file")?;
    let corpus_path = args
        .corpus
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("--grid needs --corpus to generate per-entry shards"))?;
    let vocab_path = args
        .vocab
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("--grid needs --vocab to generate per-entry shards"))?;
    super::require_exists(corpus_path, "corpus file")?;
    super::require_exists(vocab_path, "vocabulary file")?;
    let grid: GridFile = super::read_json(grid_path, "grid file")?;
    if grid.entries.is_empty() {
        anyhow::bail!("grid file has no entries");
    }
    let vocab = Vocabulary::load(vocab_path)?;
    let mut corpus = read_corpus_jsonl(corpus_path)?;
    corpus.clamp_to_vocab(vocab.size());

    std::fs::create_dir_all(&args.out)?;
    let mut summary = String::from(
        "name\tobjective\tcoupling\tK\tlambda\tseed\tfinal_loss\theldout_overall\theldout_chance\n",
    );
    for (i, entry) in grid.entries.iter().enumerate() {
        let name = entry
            .get("name")
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("entry{i}"));
        let mut merged = base.clone();
        let obj = merged
            .as_object_mut()
            .ok_or_else(|| anyhow::anyhow!("base config must be a JSON object"))?;
        if let Some(map) = entry.as_object() {
            for (k, v) in map {
                if k != "name" {
                    obj.insert(k.clone(), v.clone());
                }
            }
        }
        let flat = parse_flat(&merged)
            .with_context(|| format!("grid entry {name:?} produced an invalid config"))?;
        let config = match flat.resolve(None) {
            Ok(c) => c,
            Err(_) => {
                // vocab_size can come from the loaded vocabulary
                let mut with_vocab = merged.clone();
                with_vocab
                    .as_object_mut()
                    .unwrap()
                    .insert("vocab_size".into(), serde_json::json!(vocab.size()));
                parse_flat(&with_vocab)?.resolve(None)?
            }
        };

        let entry_dir = args.out.join(&name);
        let shards_dir = entry_dir.join("shards");
        let data = generate_shards(
            &corpus,
            &config.window,
            config.objective,
            config.seed,
            vocab.size(),
        )?;
        write_shards(
            &shards_dir,
            &data,
            &config.window,
            config.objective,
            config.seed,
            vocab.size(),
        )?;
        let (shard_config, data) = read_shards(&shards_dir)?;
        let outcome = train(&config, &shard_config, &data, Some(&entry_dir))?;
        let last = outcome.run_log.steps.last().expect("at least one step");
        let (overall, chance) = outcome
            .final_heldout
            .as_ref()
            .map(|h| (h.overall, h.chance))
            .unwrap_or((f64::NAN, f64::NAN));
        summary.push_str(&format!(
            "{name}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.4}\t{:.4}\n",
            config.objective,
            config.encoder.coupling,
            config.window.k_max,
            config.lambda,
            config.seed,
            last.loss_total,
            overall,
            chance
        ));
        println!("grid entry {name}: final loss {:.4}", last.loss_total);
    }
    let summary_path = args.out.join("grid_summary.tsv");
    std::fs::write(&summary_path, summary)?;
    write_train_manifest(args, base, 0)?;
    println!("grid summary written to {}", summary_path.display());
    Ok(())
}

fn write_train_manifest(args: &TrainArgs, base: &serde_json::Value, seed: u64) -> Result<()> {
    let mut manifest = RunManifest::new("train", Some(seed), &base.to_string());
    manifest.add_input(&args.config)?;
    if let Some(shards) = &args.shards {
        let cfg = shards.join("config.json");
        if cfg.exists() {
            manifest.add_input(&cfg)?;
        }
    }
    manifest.add_output(&args.out);
    manifest.write_beside(&args.out)?;
    Ok(())
}
