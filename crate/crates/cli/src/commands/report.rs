use anyhow::{Context, Result};
use conpono_core::manifest::RunManifest;
use conpono_core::trainer::{HeldoutRecord, StepRecord};

use crate::ReportArgs;

/// Turns a finished run directory into summary tables: a step-vs-loss CSV, a
/// k-vs-accuracy CSV (2K rows) and a key/value TSV.
pub fn run(args: ReportArgs) -> Result<()> {
    super::require_exists(&args.run, "run directory")?;
    let runlog_path = args.run.join("runlog.jsonl");
    super::require_exists(&runlog_path, "runlog.jsonl in the run directory")?;
    let out_dir = args.out.clone().unwrap_or_else(|| args.run.join("report"));
    std::fs::create_dir_all(&out_dir)?;

    let mut steps: Vec<StepRecord> = Vec::new();
    for (lineno, line) in std::fs::read_to_string(&runlog_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        steps.push(
            serde_json::from_str(line)
                .with_context(|| format!("runlog.jsonl line {}", lineno + 1))?,
        );
    }
    if steps.is_empty() {
        anyhow::bail!("runlog.jsonl is empty");
    }

    let baseline_mode = steps[0].loss_baseline.is_some();
    let mut loss_csv = if baseline_mode {
        String::from("step,loss_total,loss_baseline,loss_mlm,lr\n")
    } else {
        String::from("step,loss_total,loss_conpono,loss_mlm,lr\n")
    };
    for rec in &steps {
        let objective = rec
            .loss_conpono
            .or(rec.loss_baseline)
            .unwrap_or(f64::NAN);
        loss_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.step, rec.loss_total, objective, rec.loss_mlm, rec.lr
        ));
    }
    let loss_path = out_dir.join("loss.csv");
    std::fs::write(&loss_path, loss_csv)?;

    let mut summary = String::from("key\tvalue\n");
    let last = steps.last().unwrap();
    summary.push_str(&format!("steps\t{}\n", steps.len()));
    summary.push_str(&format!("final_loss_total\t{}\n", last.loss_total));
    if let Some(v) = last.loss_conpono {
        summary.push_str(&format!("final_loss_conpono\t{v}\n"));
    }
    if let Some(v) = last.loss_baseline {
        summary.push_str(&format!("final_loss_baseline\t{v}\n"));
    }
    summary.push_str(&format!("final_loss_mlm\t{}\n", last.loss_mlm));

    let heldout_path = args.run.join("heldout.json");
    let mut acc_rows = 0;
    if heldout_path.exists() {
        let held: HeldoutRecord = super::read_json(&heldout_path, "heldout.json")?;
        let mut acc_csv = String::from("k,accuracy\n");
        for (k, acc) in &held.per_k {
            acc_csv.push_str(&format!("{k},{acc}\n"));
            acc_rows += 1;
        }
        std::fs::write(out_dir.join("accuracy_by_k.csv"), acc_csv)?;
        summary.push_str(&format!("heldout_overall\t{}\n", held.overall));
        summary.push_str(&format!("heldout_instances\t{}\n", held.num_instances));
        summary.push_str(&format!("heldout_chance\t{}\n", held.chance));
    }
    let summary_path = out_dir.join("summary.tsv");
    std::fs::write(&summary_path, summary)?;

    let mut manifest = RunManifest::new("report", None, "{}");
    manifest.add_input(&runlog_path)?;
    manifest.add_output(&out_dir);
    manifest.write_beside(&out_dir)?;
    println!(
        "report written to {} ({} loss rows, {} accuracy rows)",
        out_dir.display(),
        steps.len(),
        acc_rows
    );
    Ok(())
}
