use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use conpono_core::corpus::read_corpus_jsonl;
use conpono_core::encoder::checkpoint;
use conpono_core::evalprobe::{
    build_probes, featurize_all, logreg::ProbeData, train_probe, write_probe_jsonl, ProbeExample,
    ProbeReport, ProbeTask, Split,
};
use conpono_core::manifest::{digest_file, RunManifest};

use crate::ProbeArgs;

fn parse_tasks(spec: &str) -> Result<Vec<ProbeTask>> {
    let mut tasks = Vec::new();
    for part in spec.split(',') {
        match part.trim().to_lowercase().as_str() {
            "sp" => tasks.push(ProbeTask::Sp),
            "bso" => tasks.push(ProbeTask::Bso),
            "dc" => tasks.push(ProbeTask::Dc),
            other => anyhow::bail!("unknown probe task {other:?}; expected sp, bso or dc"),
        }
    }
    if tasks.is_empty() {
        anyhow::bail!("no probe tasks requested");
    }
    Ok(tasks)
}

fn dataset_path(out: &Path, task: ProbeTask) -> PathBuf {
    super::sidecar(out, &task.to_string().to_lowercase()).with_extension("jsonl")
}

fn preds_path(out: &Path, task: ProbeTask) -> PathBuf {
    super::sidecar(out, &format!("{}.preds", task.to_string().to_lowercase()))
        .with_extension("jsonl")
}

/// Runs the frozen-encoder probes: builds datasets from the corpus, encodes
/// features under the checkpoint, trains logistic-regression probes, and
/// writes the report plus per-task dataset and prediction files.
pub fn run(args: ProbeArgs) -> Result<()> {
    super::require_exists(&args.checkpoint, "checkpoint")?;
    super::require_exists(&args.corpus, "corpus file")?;
    let tasks = parse_tasks(&args.tasks)?;
    let (params, _, _) = checkpoint::load(&args.checkpoint)?;
    let mut corpus = read_corpus_jsonl(&args.corpus)?;
    corpus.clamp_to_vocab(params.config.vocab_size);
    let probes = build_probes(&corpus, args.seed)?;
    let max_seq = params.config.max_positions;

    let mut report = ProbeReport {
        checkpoint: digest_file(&args.checkpoint)?,
        tasks: BTreeMap::new(),
    };
    let mut manifest = RunManifest::new("probe", Some(args.seed), &args.tasks);
    manifest.add_input(&args.checkpoint)?;
    manifest.add_input(&args.corpus)?;

    for task in tasks {
        let examples = &probes[&task];
        let features = featurize_all(examples, &params, max_seq)?;
        let (mut train_f, mut train_l) = (Vec::new(), Vec::new());
        let (mut test_f, mut test_l, mut test_ids) = (Vec::new(), Vec::new(), Vec::new());
        for (ex, f) in examples.iter().zip(features) {
            match ex.split {
                Split::Train => {
                    train_f.push(f);
                    train_l.push(ex.label);
                }
                Split::Test => {
                    test_f.push(f);
                    test_l.push(ex.label);
                    test_ids.push(ex.id);
                }
            }
        }
        let task_report = train_probe(
            &task.to_string(),
            task.num_classes(),
            &ProbeData {
                train_features: &train_f,
                train_labels: &train_l,
                test_features: &test_f,
                test_labels: &test_l,
                test_ids: &test_ids,
            },
        )?;
        println!(
            "{task}: accuracy {:.4} (majority baseline {:.4}, {} test examples)",
            task_report.accuracy, task_report.baseline, task_report.num_test
        );

        let ds_path = dataset_path(&args.out, task);
        write_probe_jsonl(examples, &ds_path)?;
        let pp = preds_path(&args.out, task);
        write_predictions(&pp, &task_report.predictions)?;
        manifest.add_output(&ds_path);
        manifest.add_output(&pp);
        report.tasks.insert(task.to_string(), task_report);
    }

    std::fs::write(
        &args.out,
        format!("{}\n", serde_json::to_string_pretty(&report)?),
    )?;
    manifest.add_output(&args.out);
    manifest.write_beside(&args.out)?;
    Ok(())
}

fn write_predictions(path: &Path, preds: &[(u64, usize)]) -> Result<()> {
    let mut out = String::new();
    for (id, pred) in preds {
        out.push_str(&format!("{{\"id\":{id},\"pred\":{pred}}}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<u64, usize>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        #[derive(serde::Deserialize)]
        struct Pred {
            id: u64,
            pred: usize,
        }
        let p: Pred = serde_json::from_str(line)
            .map_err(|e| anyhow::anyhow!("{}: line {}: {e}", path.display(), lineno + 1))?;
        map.insert(p.id, p.pred);
    }
    Ok(map)
}

pub fn test_split(examples: &[ProbeExample]) -> Vec<ProbeExample> {
    examples
        .iter()
        .filter(|e| e.split == Split::Test)
        .cloned()
        .collect()
}
