//! Training objectives: the distance-contrastive sampled-softmax loss, the
//! auxiliary masked-token loss, and the NSP/BSO baseline objectives.

use crate::encoder::{encode, mlm_logits, score, Coupling, DropoutCtx, EncoderVars};
use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tape, Tensor, Var};
use crate::sampler::{
    pack_pair, pack_single, BaselineMode, MaskPlan, PackedSeq, PairInstance, TrainingInstance,
    WindowConfig,
};
use crate::seeding::derive_stream_seed;

/// Per-batch loss components. `total` is the weighted sum
/// mean(contrastive-or-baseline) + lambda * mean(mlm).
#[derive(Clone, Debug, Default)]
pub struct LossBreakdown {
    /// Contrastive loss per instance, in batch order (empty in baseline modes).
    pub per_instance_conpono: Vec<f64>,
    pub conpono: Option<f64>,
    pub baseline: Option<f64>,
    pub mlm: f64,
    pub total: f64,
}

/// One batch element; a batch must be homogeneous in objective mode.
#[derive(Clone, Copy, Debug)]
pub enum BatchItem<'a> {
    Conpono(&'a TrainingInstance),
    Pair(&'a PairInstance, BaselineMode),
}

pub(crate) struct InstanceLossVars {
    pub total: Var,
    pub objective: Var,
    pub mlm: Option<Var>,
}

/// Packed positions and original token ids for masked positions of a joint
/// (anchor, target) pass, dropping positions lost to truncation.
fn joint_mlm_targets(
    packed: &PackedSeq,
    first_plan: &MaskPlan,
    second_plan: &MaskPlan,
) -> (Vec<usize>, Vec<usize>) {
    let mut positions = Vec::new();
    let mut originals = Vec::new();
    for e in first_plan {
        if e.position() < packed.anchor_kept {
            positions.push(packed.anchor_offset + e.position());
            originals.push(e.original() as usize);
        }
    }
    for e in second_plan {
        if e.position() < packed.target_kept {
            positions.push(packed.target_offset + e.position());
            originals.push(e.original() as usize);
        }
    }
    (positions, originals)
}

/// Mean cross entropy of the masked-token head over the given packed
/// positions of a sequence-hidden matrix; an empty plan contributes zero.
pub fn mlm_loss<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    hidden: Var,
    positions: &[usize],
    originals: &[usize],
) -> Result<Var> {
    if positions.is_empty() {
        return Ok(tape.constant(Tensor::scalar(F::zero())));
    }
    let logits = mlm_logits(tape, vars, hidden, positions)?;
    let ce = tape.cross_entropy(logits, originals)?;
    Ok(tape.mean_all(ce))
}

/// The per-candidate forward pass for one instance: every candidate encoded
/// under the instance's masking and scored against the anchor with the
/// distance-k head. Shared by training and held-out evaluation.
pub struct CandidateScores {
    /// [1, C] candidate logits under the instance's distance head.
    pub logits: Var,
    true_pair: Option<(PackedSeq, Var)>,
}

pub fn candidate_scores<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    window: &WindowConfig,
    inst: &TrainingInstance,
    dropout: Option<DropoutCtx>,
) -> Result<CandidateScores> {
    if inst.candidates.is_empty() || inst.true_index >= inst.candidates.len() {
        return Err(Error::InvalidConfig(
            "instance has no candidates or an out-of-range true_index".into(),
        ));
    }
    let sub = |tag: u64| {
        dropout.map(|d| DropoutCtx {
            rate: d.rate,
            seed: derive_stream_seed(&[d.seed, tag]),
        })
    };
    let coupling = vars.config.coupling;
    let anchor_ids = &inst.anchor.token_ids;
    let n_cand = inst.candidates.len();

    // Anchor-alone pass (c), shared across the candidate set.
    let c = match coupling {
        Coupling::Combined | Coupling::Isolated => {
            let single = pack_single(anchor_ids, window.max_seq);
            let (_, pooled) = encode(
                tape,
                vars,
                &single.ids,
                &single.segment_ids,
                &single.attention_mask,
                sub(n_cand as u64),
            )?;
            Some(pooled)
        }
        Coupling::Uni => None,
    };

    let mut logit_vars = Vec::with_capacity(n_cand);
    let mut true_pair: Option<(PackedSeq, Var)> = None;
    for (j, cand) in inst.candidates.iter().enumerate() {
        let t = match coupling {
            Coupling::Combined | Coupling::Uni => {
                let pair = pack_pair(anchor_ids, &cand.token_ids, window.max_seq);
                let (hidden, pooled) = encode(
                    tape,
                    vars,
                    &pair.ids,
                    &pair.segment_ids,
                    &pair.attention_mask,
                    sub(j as u64),
                )?;
                if j == inst.true_index {
                    true_pair = Some((pair, hidden));
                }
                pooled
            }
            Coupling::Isolated => {
                let single = pack_single(&cand.token_ids, window.max_seq);
                let (_, pooled) = encode(
                    tape,
                    vars,
                    &single.ids,
                    &single.segment_ids,
                    &single.attention_mask,
                    sub(j as u64),
                )?;
                pooled
            }
        };
        logit_vars.push(score(tape, vars, c, t, inst.k)?);
    }
    let logits = tape.concat(&logit_vars, 1)?; // [1, C]
    Ok(CandidateScores { logits, true_pair })
}

/// The contrastive loss for one instance: softmax cross entropy of the true
/// candidate over the candidate set, plus the masked-token loss computed on
/// the joint (anchor, true-target) pass only.
pub(crate) fn conpono_instance_loss<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    window: &WindowConfig,
    inst: &TrainingInstance,
    lambda: f64,
    dropout: Option<DropoutCtx>,
) -> Result<InstanceLossVars> {
    if inst.mask_plan.len() != inst.candidates.len() + 1 {
        return Err(Error::InvalidConfig(format!(
            "instance carries {} mask plans for {} encoded inputs",
            inst.mask_plan.len(),
            inst.candidates.len() + 1
        )));
    }
    let sub = |tag: u64| {
        dropout.map(|d| DropoutCtx {
            rate: d.rate,
            seed: derive_stream_seed(&[d.seed, tag]),
        })
    };
    let n_cand = inst.candidates.len();
    let scores = candidate_scores(tape, vars, window, inst, dropout)?;
    let ce = tape.cross_entropy(scores.logits, &[inst.true_index])?;
    let objective = tape.sum_all(ce);

    let mlm = if lambda != 0.0 && window.mask_rate > 0.0 {
        let (packed, hidden) = match scores.true_pair {
            Some(ph) => ph,
            None => {
                // isolated coupling has no joint pass; run one for the
                // masked-token objective
                let pair = pack_pair(
                    &inst.anchor.token_ids,
                    &inst.candidates[inst.true_index].token_ids,
                    window.max_seq,
                );
                let (hidden, _) = encode(
                    tape,
                    vars,
                    &pair.ids,
                    &pair.segment_ids,
                    &pair.attention_mask,
                    sub(n_cand as u64 + 1),
                )?;
                (pair, hidden)
            }
        };
        let (positions, originals) = joint_mlm_targets(
            &packed,
            &inst.mask_plan[0],
            &inst.mask_plan[1 + inst.true_index],
        );
        Some(mlm_loss(tape, vars, hidden, &positions, &originals)?)
    } else {
        None
    };

    let total = match mlm {
        Some(m) => {
            let weighted = tape.scale(m, lambda);
            tape.add(objective, weighted)?
        }
        None => objective,
    };
    Ok(InstanceLossVars {
        total,
        objective,
        mlm,
    })
}

/// Binary classification loss for one NSP/BSO pair plus the masked-token
/// loss on the same joint pass.
pub(crate) fn pair_instance_loss<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    window: &WindowConfig,
    pair: &PairInstance,
    lambda: f64,
    dropout: Option<DropoutCtx>,
) -> Result<InstanceLossVars> {
    if pair.label > 1 {
        return Err(Error::InvalidConfig(format!(
            "pair label must be 0 or 1, got {}",
            pair.label
        )));
    }
    if pair.mask_plan.len() != 2 {
        return Err(Error::InvalidConfig(format!(
            "pair carries {} mask plans, expected 2",
            pair.mask_plan.len()
        )));
    }
    let packed = pack_pair(&pair.first.token_ids, &pair.second.token_ids, window.max_seq);
    let (hidden, pooled) = encode(
        tape,
        vars,
        &packed.ids,
        &packed.segment_ids,
        &packed.attention_mask,
        dropout,
    )?;
    let (cls_w, cls_b) = vars.pair_cls();
    let logits = tape.matmul(pooled, cls_w)?;
    let logits = tape.add_bias(logits, cls_b)?;
    let ce = tape.cross_entropy(logits, &[pair.label as usize])?;
    let objective = tape.sum_all(ce);

    let mlm = if lambda != 0.0 && window.mask_rate > 0.0 {
        let (positions, originals) =
            joint_mlm_targets(&packed, &pair.mask_plan[0], &pair.mask_plan[1]);
        Some(mlm_loss(tape, vars, hidden, &positions, &originals)?)
    } else {
        None
    };
    let total = match mlm {
        Some(m) => {
            let weighted = tape.scale(m, lambda);
            tape.add(objective, weighted)?
        }
        None => objective,
    };
    Ok(InstanceLossVars {
        total,
        objective,
        mlm,
    })
}

/// Mean loss over a homogeneous batch: mean(objective) + lambda * mean(mlm).
/// Returns the scalar loss var for backward plus the numeric breakdown.
pub fn total_loss<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    window: &WindowConfig,
    batch: &[BatchItem],
    lambda: f64,
    dropout: Option<DropoutCtx>,
) -> Result<(Var, LossBreakdown)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let conpono_mode = matches!(batch[0], BatchItem::Conpono(_));
    if batch
        .iter()
        .any(|item| matches!(item, BatchItem::Conpono(_)) != conpono_mode)
    {
        return Err(Error::InvalidConfig(
            "batch mixes contrastive instances with baseline pairs".into(),
        ));
    }
    if !conpono_mode {
        let first_mode = match batch[0] {
            BatchItem::Pair(_, m) => m,
            _ => unreachable!(),
        };
        if batch.iter().any(|item| match item {
            BatchItem::Pair(_, m) => *m != first_mode,
            _ => false,
        }) {
            return Err(Error::InvalidConfig(
                "batch mixes NSP and BSO pairs".into(),
            ));
        }
    }

    let sub = |idx: usize| {
        dropout.map(|d| DropoutCtx {
            rate: d.rate,
            seed: derive_stream_seed(&[d.seed, idx as u64]),
        })
    };
    let mut totals = Vec::with_capacity(batch.len());
    let mut breakdown = LossBreakdown::default();
    let mut objective_sum = 0.0;
    let mut mlm_sum = 0.0;
    for (idx, item) in batch.iter().enumerate() {
        let parts = match item {
            BatchItem::Conpono(inst) => {
                conpono_instance_loss(tape, vars, window, inst, lambda, sub(idx))?
            }
            BatchItem::Pair(pair, _) => {
                pair_instance_loss(tape, vars, window, pair, lambda, sub(idx))?
            }
        };
        let obj_val = tape.value(parts.objective).item()?.to_f64_();
        objective_sum += obj_val;
        if conpono_mode {
            breakdown.per_instance_conpono.push(obj_val);
        }
        if let Some(m) = parts.mlm {
            mlm_sum += tape.value(m).item()?.to_f64_();
        }
        totals.push(parts.total);
    }
    let mut reshaped = Vec::with_capacity(totals.len());
    for &v in &totals {
        reshaped.push(tape.reshape(v, vec![1])?);
    }
    let stacked = tape.concat(&reshaped, 0)?;
    let loss = tape.mean_all(stacked);

    let n = batch.len() as f64;
    if conpono_mode {
        breakdown.conpono = Some(objective_sum / n);
    } else {
        breakdown.baseline = Some(objective_sum / n);
    }
    breakdown.mlm = mlm_sum / n;
    breakdown.total = tape.value(loss).item()?.to_f64_();
    Ok((loss, breakdown))
}


#[cfg(test)]
mod tests;
