//! Deterministic training loop over instance shards, heldout monitoring,
//! and checkpointing.

pub mod flat;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{checkpoint, DropoutCtx, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::numcore::{adam_step, OptimizerState, Tape, Tensor};
use crate::objective::{
    candidate_scores, conpono_instance_loss, pair_instance_loss, BatchItem,
};
use crate::sampler::{
    apply_masking, unmask, BaselineMode, PairInstance, ShardConfig, ShardData, ShardMode,
    TrainingInstance, WindowConfig,
};
use crate::seeding::{derive_stream_seed, splitmix64, unit_fraction};

/// Salt for the document-id heldout split; fixed so the split depends only
/// on (doc_id, fraction), never on the training seed.
const HELDOUT_SALT: u64 = 0x68_65_6c_64_6f_75_74;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ShardMode,
    pub encoder: EncoderConfig,
    pub window: WindowConfig,
    pub batch_size: usize,
    pub total_steps: u64,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub lambda: f64,
    pub dropout: f64,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub heldout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: ShardMode::Conpono,
            encoder: EncoderConfig::default(),
            window: WindowConfig::default(),
            batch_size: 8,
            total_steps: 500,
            base_lr: 1e-3,
            warmup_fraction: 0.25,
            lambda: 1.0,
            dropout: 0.1,
            seed: 1,
            checkpoint_interval: 100,
            heldout_fraction: 0.02,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.window.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig(format!(
                "warmup_fraction must be in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::InvalidConfig(format!(
                "heldout_fraction must be in [0, 1), got {}",
                self.heldout_fraction
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::InvalidConfig("total_steps must be >= 1".into()));
        }
        if self.encoder.max_positions < self.window.max_seq {
            return Err(Error::InvalidConfig(format!(
                "encoder max_positions {} smaller than window max_seq {}",
                self.encoder.max_positions, self.window.max_seq
            )));
        }
        Ok(())
    }

    /// Rejects shards whose sampling geometry disagrees with this config.
    pub fn check_shard_compat(&self, shard: &ShardConfig) -> Result<()> {
        if shard.mode != self.objective {
            return Err(Error::ShardMismatch {
                field: "objective mode",
                shard_value: shard.mode.to_string(),
                config_value: self.objective.to_string(),
            });
        }
        if shard.window.k_max != self.window.k_max {
            return Err(Error::ShardMismatch {
                field: "K",
                shard_value: shard.window.k_max.to_string(),
                config_value: self.window.k_max.to_string(),
            });
        }
        if shard.window.max_seq != self.window.max_seq {
            return Err(Error::ShardMismatch {
                field: "max_seq",
                shard_value: shard.window.max_seq.to_string(),
                config_value: self.window.max_seq.to_string(),
            });
        }
        if shard.window.candidate_count() != self.window.candidate_count() {
            return Err(Error::ShardMismatch {
                field: "candidate count",
                shard_value: shard.window.candidate_count().to_string(),
                config_value: self.window.candidate_count().to_string(),
            });
        }
        if shard.vocab_size != self.encoder.vocab_size {
            return Err(Error::ShardMismatch {
                field: "vocab_size",
                shard_value: shard.vocab_size.to_string(),
                config_value: self.encoder.vocab_size.to_string(),
            });
        }
        if self.encoder.k_max != self.window.k_max {
            return Err(Error::InvalidConfig(format!(
                "encoder K {} differs from window K {}",
                self.encoder.k_max, self.window.k_max
            )));
        }
        Ok(())
    }
}

/// One serialized training-step record. Wall time is tracked in memory but
/// never serialized, so logs from identical runs are bit-identical.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_conpono: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_baseline: Option<f64>,
    pub loss_mlm: f64,
    pub lr: f64,
    #[serde(skip)]
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeldoutRecord {
    pub step: u64,
    pub overall: f64,
    pub per_k: BTreeMap<i32, f64>,
    pub num_instances: usize,
    pub chance: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub heldout: Vec<HeldoutRecord>,
}

impl RunLog {
    pub fn steps_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for rec in &self.steps {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn heldout_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for rec in &self.heldout {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn is_heldout_doc(doc_id: u64, fraction: f64) -> bool {
    unit_fraction(splitmix64(doc_id ^ HELDOUT_SALT)) < fraction
}

enum Dataset {
    Conpono(Vec<TrainingInstance>),
    Pairs(Vec<PairInstance>, BaselineMode),
}

impl Dataset {
    fn len(&self) -> usize {
        match self {
            Dataset::Conpono(v) => v.len(),
            Dataset::Pairs(v, _) => v.len(),
        }
    }
}

/// Restores raw tokens from the stored plans, then applies fresh masking for
/// the given epoch. Streams are derived from span coordinates so the result
/// is a pure function of (instance, config seed, epoch).
fn remask_instance(
    inst: &TrainingInstance,
    window: &WindowConfig,
    vocab_size: usize,
    seed: u64,
    epoch: u64,
) -> TrainingInstance {
    let mut out = inst.clone();
    let a = &inst.anchor.span;
    let base = derive_stream_seed(&[
        seed,
        a.doc_id,
        a.paragraph as u64,
        a.start as u64,
        (inst.k + 16) as u64,
        epoch,
    ]);
    let raw_anchor = unmask(&inst.anchor.token_ids, &inst.mask_plan[0]);
    let (anchor_ids, anchor_plan) = apply_masking(
        &raw_anchor,
        window.mask_rate,
        vocab_size,
        derive_stream_seed(&[base, 0]),
    );
    out.anchor.token_ids = anchor_ids;
    out.mask_plan[0] = anchor_plan;
    for (j, cand) in inst.candidates.iter().enumerate() {
        let raw = unmask(&cand.token_ids, &inst.mask_plan[1 + j]);
        let (ids, plan) = apply_masking(
            &raw,
            window.mask_rate,
            vocab_size,
            derive_stream_seed(&[base, 1 + j as u64]),
        );
        out.candidates[j].token_ids = ids;
        out.mask_plan[1 + j] = plan;
    }
    out
}

fn remask_pair(
    pair: &PairInstance,
    window: &WindowConfig,
    vocab_size: usize,
    seed: u64,
    epoch: u64,
) -> PairInstance {
    let mut out = pair.clone();
    let f = &pair.first.span;
    let s = &pair.second.span;
    let base = derive_stream_seed(&[
        seed,
        f.doc_id,
        f.paragraph as u64,
        f.start as u64,
        s.doc_id,
        s.start as u64,
        epoch,
    ]);
    for (idx, (tokens, plan)) in [
        (&pair.first.token_ids, &pair.mask_plan[0]),
        (&pair.second.token_ids, &pair.mask_plan[1]),
    ]
    .into_iter()
    .enumerate()
    {
        let raw = unmask(tokens, plan);
        let (ids, new_plan) = apply_masking(
            &raw,
            window.mask_rate,
            vocab_size,
            derive_stream_seed(&[base, idx as u64]),
        );
        if idx == 0 {
            out.first.token_ids = ids;
        } else {
            out.second.token_ids = ids;
        }
        out.mask_plan[idx] = new_plan;
    }
    out
}

struct InstanceResult {
    breakdown_total: f64,
    objective: f64,
    mlm: f64,
    grads: Vec<Tensor<f32>>,
}

/// Forward + backward for one batch element on its own tape. Gradients come
/// back in parameter-schema order.
fn instance_grads(
    params: &EncoderParams<f32>,
    config: &TrainConfig,
    item: &BatchItem,
    dropout_seed: u64,
) -> Result<InstanceResult> {
    let mut tape = Tape::new();
    let vars = params.mount(&mut tape, true);
    let dropout = (config.dropout > 0.0).then_some(DropoutCtx {
        rate: config.dropout,
        seed: dropout_seed,
    });
    let parts = match item {
        BatchItem::Conpono(inst) => {
            conpono_instance_loss(&mut tape, &vars, &config.window, inst, config.lambda, dropout)?
        }
        BatchItem::Pair(pair, _) => {
            pair_instance_loss(&mut tape, &vars, &config.window, pair, config.lambda, dropout)?
        }
    };
    let total = tape.value(parts.total).item()? as f64;
    let objective = tape.value(parts.objective).item()? as f64;
    let mlm = parts
        .mlm
        .map(|m| tape.value(m).item().map(|v| v as f64))
        .transpose()?
        .unwrap_or(0.0);
    let mut grads = tape.backward(parts.total)?;
    let grad_tensors: Vec<Tensor<f32>> = vars
        .all()
        .iter()
        .zip(params.tensors())
        .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
        .collect();
    Ok(InstanceResult {
        breakdown_total: total,
        objective,
        mlm,
        grads: grad_tensors,
    })
}

pub struct TrainOutcome {
    pub params: EncoderParams<f32>,
    pub run_log: RunLog,
    pub final_heldout: Option<HeldoutRecord>,
}

/// Deterministic training over shards: heldout documents are split off by a
/// doc-id hash, batches are composed by a seeded shuffle each epoch,
/// instances are re-masked per epoch, per-instance gradients are averaged in
/// batch order, and Adam applies the warmup/decay schedule. Checkpoints and
/// the run log land in `out_dir` when given.
pub fn train(
    config: &TrainConfig,
    shard_config: &ShardConfig,
    data: &ShardData,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    config.check_shard_compat(shard_config)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let baseline_mode = match shard_config.mode {
        ShardMode::Nsp => Some(BaselineMode::Nsp),
        ShardMode::Bso => Some(BaselineMode::Bso),
        ShardMode::Conpono => None,
    };
    let (train_set, heldout_set) = match data {
        ShardData::Conpono(instances) => {
            let (held, train): (Vec<_>, Vec<_>) = instances
                .iter()
                .cloned()
                .partition(|i| is_heldout_doc(i.anchor.span.doc_id, config.heldout_fraction));
            (Dataset::Conpono(train), Dataset::Conpono(held))
        }
        ShardData::Pairs(pairs) => {
            let (held, train): (Vec<_>, Vec<_>) = pairs
                .iter()
                .cloned()
                .partition(|p| is_heldout_doc(p.first.span.doc_id, config.heldout_fraction));
            let mode = baseline_mode.expect("pair shards imply a baseline mode");
            (Dataset::Pairs(train, mode), Dataset::Pairs(held, mode))
        }
    };
    if train_set.len() == 0 {
        return Err(Error::EmptyInput(
            "no training instances left after the heldout split".into(),
        ));
    }

    let mut params = EncoderParams::<f32>::init(&config.encoder, config.seed)?;
    let shapes: Vec<Vec<usize>> = params.tensors().iter().map(|t| t.shape().to_vec()).collect();
    let mut opt = OptimizerState::new(
        config.base_lr,
        config.warmup_fraction,
        config.total_steps,
        &shapes,
    );
    let mut run_log = RunLog::default();

    let n_train = train_set.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut epoch: u64 = 0;
    let mut cursor = n_train; // force a shuffle before the first batch
    let mut epoch_cache: Option<Dataset> = None;

    for step in 0..config.total_steps {
        if cursor >= n_train {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_stream_seed(&[
                config.seed,
                0x6261_7463,
                epoch,
            ]));
            order.shuffle(&mut rng);
            cursor = 0;
            // re-mask the epoch's instances up front
            epoch_cache = Some(match &train_set {
                Dataset::Conpono(v) => Dataset::Conpono(
                    v.par_iter()
                        .map(|i| {
                            remask_instance(
                                i,
                                &config.window,
                                config.encoder.vocab_size,
                                config.seed,
                                epoch,
                            )
                        })
                        .collect(),
                ),
                Dataset::Pairs(v, m) => Dataset::Pairs(
                    v.par_iter()
                        .map(|p| {
                            remask_pair(
                                p,
                                &config.window,
                                config.encoder.vocab_size,
                                config.seed,
                                epoch,
                            )
                        })
                        .collect(),
                    *m,
                ),
            });
            epoch += 1;
        }
        let active = epoch_cache.as_ref().expect("epoch cache populated");
        let batch_indices: Vec<usize> = order
            [cursor..(cursor + config.batch_size).min(n_train)]
            .to_vec();
        cursor += config.batch_size;

        let t0 = std::time::Instant::now();
        let results: Vec<Result<InstanceResult>> = batch_indices
            .par_iter()
            .enumerate()
            .map(|(slot, &idx)| {
                let dropout_seed =
                    derive_stream_seed(&[config.seed, 0x6472_6f70, step, slot as u64]);
                let item = match active {
                    Dataset::Conpono(v) => BatchItem::Conpono(&v[idx]),
                    Dataset::Pairs(v, m) => BatchItem::Pair(&v[idx], *m),
                };
                instance_grads(&params, config, &item, dropout_seed)
            })
            .collect();

        let mut grad_sum: Option<Vec<Tensor<f32>>> = None;
        let mut total_sum = 0.0;
        let mut objective_sum = 0.0;
        let mut mlm_sum = 0.0;
        let batch_n = batch_indices.len();
        for r in results {
            let r = r?;
            total_sum += r.breakdown_total;
            objective_sum += r.objective;
            mlm_sum += r.mlm;
            match &mut grad_sum {
                None => grad_sum = Some(r.grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&r.grads) {
                        a.add_assign(g)?;
                    }
                }
            }
        }
        let mut grads = grad_sum.expect("non-empty batch");
        let scale = 1.0 / batch_n as f32;
        for g in &mut grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
        let lr = opt.lr_at_step(opt.step);
        adam_step(params.tensors_mut(), &grads, &mut opt)?;

        run_log.steps.push(StepRecord {
            step,
            loss_total: total_sum / batch_n as f64,
            loss_conpono: baseline_mode.is_none().then_some(objective_sum / batch_n as f64),
            loss_baseline: baseline_mode.is_some().then_some(objective_sum / batch_n as f64),
            loss_mlm: mlm_sum / batch_n as f64,
            lr,
            wall_ms: t0.elapsed().as_secs_f64() * 1000.0,
        });

        let at_interval = config.checkpoint_interval > 0
            && (step + 1) % config.checkpoint_interval == 0;
        let last = step + 1 == config.total_steps;
        if at_interval || last {
            if heldout_set.len() > 0 {
                let rec = evaluate_dataset(&params, config, &heldout_set, step + 1)?;
                run_log.heldout.push(rec);
            }
            if let Some(dir) = out_dir {
                let name = if last {
                    "checkpoint-final.cnpn".to_string()
                } else {
                    format!("checkpoint-{:06}.cnpn", step + 1)
                };
                checkpoint::save(&params, step + 1, config.seed, &dir.join(name))?;
                write_logs(dir, &run_log)?;
            }
        }
    }

    if let Some(dir) = out_dir {
        write_logs(dir, &run_log)?;
        if let Some(rec) = run_log.heldout.last() {
            let path = dir.join("heldout.json");
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::to_writer_pretty(&mut f, rec)?;
            f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(TrainOutcome {
        params,
        final_heldout: run_log.heldout.last().cloned(),
        run_log,
    })
}

fn write_logs(dir: &Path, run_log: &RunLog) -> Result<()> {
    let path = dir.join("runlog.jsonl");
    std::fs::write(&path, run_log.steps_jsonl()?).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("heldout.jsonl");
    std::fs::write(&path, run_log.heldout_jsonl()?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn evaluate_dataset(
    params: &EncoderParams<f32>,
    config: &TrainConfig,
    data: &Dataset,
    step: u64,
) -> Result<HeldoutRecord> {
    match data {
        Dataset::Conpono(instances) => {
            evaluate_heldout_instances(params, &config.window, instances, step)
        }
        Dataset::Pairs(pairs, _) => evaluate_heldout_pairs(params, &config.window, pairs, step),
    }
}

/// Accuracy of the contrastive objective on held-out instances, overall and
/// per distance label. Prediction is the argmax candidate logit with ties
/// broken toward the lowest index; chance is 1/C.
pub fn evaluate_heldout_instances(
    params: &EncoderParams<f32>,
    window: &WindowConfig,
    instances: &[TrainingInstance],
    step: u64,
) -> Result<HeldoutRecord> {
    if instances.is_empty() {
        return Err(Error::EmptyInput("empty heldout set".into()));
    }
    let outcomes: Vec<Result<(i32, bool)>> = instances
        .par_iter()
        .map(|inst| {
            let mut tape = Tape::new();
            let vars = params.mount(&mut tape, false);
            let scores = candidate_scores(&mut tape, &vars, window, inst, None)?;
            let logits = tape.value(scores.logits).data();
            let mut best = 0usize;
            for (j, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = j;
                }
            }
            Ok((inst.k, best == inst.true_index))
        })
        .collect();
    let mut per_k_hits: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    let mut hits = 0usize;
    for outcome in outcomes {
        let (k, ok) = outcome?;
        let entry = per_k_hits.entry(k).or_insert((0, 0));
        entry.1 += 1;
        if ok {
            entry.0 += 1;
            hits += 1;
        }
    }
    let per_k = per_k_hits
        .into_iter()
        .map(|(k, (h, n))| (k, h as f64 / n as f64))
        .collect();
    let c = instances[0].candidates.len();
    Ok(HeldoutRecord {
        step,
        overall: hits as f64 / instances.len() as f64,
        per_k,
        num_instances: instances.len(),
        chance: 1.0 / c as f64,
    })
}

/// Binary accuracy of the pair classifier on held-out NSP/BSO pairs.
pub fn evaluate_heldout_pairs(
    params: &EncoderParams<f32>,
    window: &WindowConfig,
    pairs: &[PairInstance],
    step: u64,
) -> Result<HeldoutRecord> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("empty heldout set".into()));
    }
    let outcomes: Vec<Result<bool>> = pairs
        .par_iter()
        .map(|pair| {
            let mut tape = Tape::new();
            let vars = params.mount(&mut tape, false);
            let packed = crate::sampler::pack_pair(
                &pair.first.token_ids,
                &pair.second.token_ids,
                window.max_seq,
            );
            let (_, pooled) = crate::encoder::encode(
                &mut tape,
                &vars,
                &packed.ids,
                &packed.segment_ids,
                &packed.attention_mask,
                None,
            )?;
            let (w, b) = vars.pair_cls();
            let logits = tape.matmul(pooled, w)?;
            let logits = tape.add_bias(logits, b)?;
            let lv = tape.value(logits).data();
            let pred = if lv[1] > lv[0] { 1u8 } else { 0u8 };
            Ok(pred == pair.label)
        })
        .collect();
    let mut hits = 0usize;
    for o in outcomes {
        if o? {
            hits += 1;
        }
    }
    let mut per_k = BTreeMap::new();
    per_k.insert(0, hits as f64 / pairs.len() as f64);
    Ok(HeldoutRecord {
        step,
        overall: hits as f64 / pairs.len() as f64,
        per_k,
        num_instances: pairs.len(),
        chance: 0.5,
    })
}

#[cfg(test)]
mod tests;
