//! Test-support code for the acceptance suite, most importantly the
//! independent loss oracle: a from-scratch f64 forward pass over plain
//! slices, with no shared code with the tape-based implementation it checks.

#![allow(dead_code)]

use std::collections::HashMap;

use conpono_core::corpus::{
    generate_synthetic_corpus, ingest_text, Corpus, SyntheticConfig, Vocabulary,
};
use conpono_core::encoder::{Coupling, EncoderConfig, EncoderParams};
use conpono_core::sampler::{
    pack_pair, pack_single, PackedSeq, TrainingInstance, WindowConfig,
};

pub fn synthetic_fixture(
    seed: u64,
    docs: usize,
    paragraphs: usize,
    smin: usize,
    smax: usize,
) -> (Corpus, Vocabulary) {
    let texts = generate_synthetic_corpus(&SyntheticConfig {
        seed,
        num_docs: docs,
        paragraphs_per_doc: paragraphs,
        sentences_min: smin,
        sentences_max: smax,
    })
    .expect("valid synthetic config");
    let joined = texts.join("\n===\n");
    let vocab = Vocabulary::build([joined.as_str()], 8192).expect("vocab");
    (ingest_text(&joined, &vocab, 0), vocab)
}

/// Named f64 views over an encoder's tensors.
pub struct OracleParams {
    pub config: EncoderConfig,
    by_name: HashMap<String, (Vec<usize>, Vec<f64>)>,
}

impl OracleParams {
    pub fn from_params(params: &EncoderParams<f64>) -> Self {
        let schema = params.config.parameter_schema();
        let by_name = schema
            .into_iter()
            .zip(params.tensors())
            .map(|((name, shape), t)| (name, (shape, t.data().to_vec())))
            .collect();
        OracleParams {
            config: params.config.clone(),
            by_name,
        }
    }

    fn get(&self, name: &str) -> (&[usize], &[f64]) {
        let (shape, data) = self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        (shape, data)
    }
}

fn matvec_rows(x: &[Vec<f64>], w: &[f64], rows_in: usize, cols_out: usize) -> Vec<Vec<f64>> {
    // x: n vectors of rows_in; w stored row-major [rows_in, cols_out]
    x.iter()
        .map(|xi| {
            let mut out = vec![0.0; cols_out];
            for (r, &xv) in xi.iter().enumerate().take(rows_in) {
                for c in 0..cols_out {
                    out[c] += xv * w[r * cols_out + c];
                }
            }
            out
        })
        .collect()
}

fn add_bias_rows(x: &mut [Vec<f64>], b: &[f64]) {
    for row in x {
        for (v, &bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
}

fn layer_norm_rows(x: &[Vec<f64>], gamma: &[f64], beta: &[f64]) -> Vec<Vec<f64>> {
    let n = gamma.len() as f64;
    x.iter()
        .map(|row| {
            let mean: f64 = row.iter().sum::<f64>() / n;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let rstd = 1.0 / (var + 1e-12).sqrt();
            row.iter()
                .zip(gamma.iter().zip(beta))
                .map(|(&v, (&g, &b))| g * (v - mean) * rstd + b)
                .collect()
        })
        .collect()
}

fn gelu_scalar(x: f64) -> f64 {
    let c = 0.7978845608028654f64;
    let u = c * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Full transformer forward over the non-pad prefix; returns every
/// position's final hidden state plus the pooled vector.
pub fn oracle_encode(p: &OracleParams, packed: &PackedSeq) -> (Vec<Vec<f64>>, Vec<f64>) {
    let cfg = &p.config;
    let eff = packed.effective_len();
    let h = cfg.hidden;
    let heads = cfg.heads;
    let dh = h / heads;

    let (_, tok_table) = p.get("token_embeddings");
    let (_, pos_table) = p.get("position_embeddings");
    let (_, seg_table) = p.get("segment_embeddings");
    let mut x: Vec<Vec<f64>> = (0..eff)
        .map(|i| {
            let tok = packed.ids[i] as usize;
            let seg = packed.segment_ids[i] as usize;
            (0..h)
                .map(|d| {
                    tok_table[tok * h + d] + pos_table[i * h + d] + seg_table[seg * h + d]
                })
                .collect()
        })
        .collect();
    {
        let (_, g) = p.get("embedding_ln_gamma");
        let (_, b) = p.get("embedding_ln_beta");
        x = layer_norm_rows(&x, g, b);
    }

    for layer in 0..cfg.layers {
        let name = |suffix: &str| format!("layer{layer}.{suffix}");
        let (_, wq) = p.get(&name("attn_q_w"));
        let (_, bq) = p.get(&name("attn_q_b"));
        let (_, wk) = p.get(&name("attn_k_w"));
        let (_, bk) = p.get(&name("attn_k_b"));
        let (_, wv) = p.get(&name("attn_v_w"));
        let (_, bv) = p.get(&name("attn_v_b"));
        let mut q = matvec_rows(&x, wq, h, h);
        add_bias_rows(&mut q, bq);
        let mut k = matvec_rows(&x, wk, h, h);
        add_bias_rows(&mut k, bk);
        let mut v = matvec_rows(&x, wv, h, h);
        add_bias_rows(&mut v, bv);

        // per-head scaled dot-product attention
        let mut ctx = vec![vec![0.0f64; h]; eff];
        let scale = 1.0 / (dh as f64).sqrt();
        for head in 0..heads {
            let off = head * dh;
            for i in 0..eff {
                let scores: Vec<f64> = (0..eff)
                    .map(|j| {
                        let mut s = 0.0;
                        for d in 0..dh {
                            s += q[i][off + d] * k[j][off + d];
                        }
                        s * scale
                    })
                    .collect();
                let probs = softmax(&scores);
                for d in 0..dh {
                    let mut acc = 0.0;
                    for (j, &pj) in probs.iter().enumerate() {
                        acc += pj * v[j][off + d];
                    }
                    ctx[i][off + d] = acc;
                }
            }
        }
        let (_, wo) = p.get(&name("attn_out_w"));
        let (_, bo) = p.get(&name("attn_out_b"));
        let mut attn = matvec_rows(&ctx, wo, h, h);
        add_bias_rows(&mut attn, bo);
        for (xi, ai) in x.iter_mut().zip(&attn) {
            for (xv, av) in xi.iter_mut().zip(ai) {
                *xv += av;
            }
        }
        let (_, g1) = p.get(&name("attn_ln_gamma"));
        let (_, b1) = p.get(&name("attn_ln_beta"));
        x = layer_norm_rows(&x, g1, b1);

        let (_, w_in) = p.get(&name("ffn_in_w"));
        let (_, b_in) = p.get(&name("ffn_in_b"));
        let (_, w_out) = p.get(&name("ffn_out_w"));
        let (_, b_out) = p.get(&name("ffn_out_b"));
        let mut ffn = matvec_rows(&x, w_in, h, cfg.intermediate);
        add_bias_rows(&mut ffn, b_in);
        for row in &mut ffn {
            for v in row.iter_mut() {
                *v = gelu_scalar(*v);
            }
        }
        let mut ffn = matvec_rows(&ffn, w_out, cfg.intermediate, h);
        add_bias_rows(&mut ffn, b_out);
        for (xi, fi) in x.iter_mut().zip(&ffn) {
            for (xv, fv) in xi.iter_mut().zip(fi) {
                *xv += fv;
            }
        }
        let (_, g2) = p.get(&name("ffn_ln_gamma"));
        let (_, b2) = p.get(&name("ffn_ln_beta"));
        x = layer_norm_rows(&x, g2, b2);
    }

    let (_, pw) = p.get("pooler_w");
    let (_, pb) = p.get("pooler_b");
    let mut pooled = vec![0.0f64; h];
    for d in 0..h {
        let mut acc = pb[d];
        for r in 0..h {
            acc += x[0][r] * pw[r * h + d];
        }
        pooled[d] = acc.tanh();
    }
    (x, pooled)
}

fn oracle_score(p: &OracleParams, c: Option<&[f64]>, t: &[f64], k: i32) -> f64 {
    let h = p.config.hidden;
    let (shape, head) = p.get(&format!("distance_head_{k}"));
    match p.config.coupling {
        Coupling::Uni => {
            assert_eq!(shape, [h]);
            t.iter().zip(head).map(|(&a, &b)| a * b).sum()
        }
        _ => {
            let c = c.expect("matrix heads need c");
            let mut total = 0.0;
            for i in 0..h {
                for j in 0..h {
                    total += t[i] * head[i * h + j] * c[j];
                }
            }
            total
        }
    }
}

fn oracle_mlm(
    p: &OracleParams,
    hidden: &[Vec<f64>],
    positions: &[usize],
    originals: &[usize],
) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    let h = p.config.hidden;
    let v_size = p.config.vocab_size;
    let (_, dense_w) = p.get("mlm_dense_w");
    let (_, dense_b) = p.get("mlm_dense_b");
    let (_, ln_g) = p.get("mlm_ln_gamma");
    let (_, ln_b) = p.get("mlm_ln_beta");
    let (_, tok_table) = p.get("token_embeddings");
    let (_, out_bias) = p.get("mlm_output_bias");
    let rows: Vec<Vec<f64>> = positions.iter().map(|&pos| hidden[pos].clone()).collect();
    let mut d = matvec_rows(&rows, dense_w, h, h);
    add_bias_rows(&mut d, dense_b);
    for row in &mut d {
        for v in row.iter_mut() {
            *v = gelu_scalar(*v);
        }
    }
    let d = layer_norm_rows(&d, ln_g, ln_b);
    let mut total = 0.0;
    for (row, &orig) in d.iter().zip(originals) {
        let logits: Vec<f64> = (0..v_size)
            .map(|t| {
                let mut acc = out_bias[t];
                for r in 0..h {
                    acc += row[r] * tok_table[t * h + r];
                }
                acc
            })
            .collect();
        let probs = softmax(&logits);
        total += -probs[orig].ln();
    }
    total / positions.len() as f64
}

/// The brute-force total loss for a batch of contrastive instances:
/// candidate scores enumerated directly from the log-bilinear definition,
/// softmax cross entropy over the candidate set, plus lambda times the
/// masked-token loss on the joint (anchor, true-target) pass.
pub fn oracle_total_loss(
    p: &OracleParams,
    window: &WindowConfig,
    batch: &[&TrainingInstance],
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    for inst in batch {
        let anchor_single = pack_single(&inst.anchor.token_ids, window.max_seq);
        let c = match p.config.coupling {
            Coupling::Combined | Coupling::Isolated => {
                Some(oracle_encode(p, &anchor_single).1)
            }
            Coupling::Uni => None,
        };
        let mut true_hidden: Option<(PackedSeq, Vec<Vec<f64>>)> = None;
        let scores: Vec<f64> = inst
            .candidates
            .iter()
            .enumerate()
            .map(|(j, cand)| {
                let t = match p.config.coupling {
                    Coupling::Isolated => {
                        let packed = pack_single(&cand.token_ids, window.max_seq);
                        oracle_encode(p, &packed).1
                    }
                    _ => {
                        let packed =
                            pack_pair(&inst.anchor.token_ids, &cand.token_ids, window.max_seq);
                        let (hidden, pooled) = oracle_encode(p, &packed);
                        if j == inst.true_index {
                            true_hidden = Some((packed, hidden));
                        }
                        pooled
                    }
                };
                oracle_score(p, c.as_deref(), &t, inst.k)
            })
            .collect();
        let probs = softmax(&scores);
        let contrastive = -probs[inst.true_index].ln();

        let mlm = if lambda != 0.0 && window.mask_rate > 0.0 {
            let (packed, hidden) = match true_hidden {
                Some(ph) => ph,
                None => {
                    let packed = pack_pair(
                        &inst.anchor.token_ids,
                        &inst.candidates[inst.true_index].token_ids,
                        window.max_seq,
                    );
                    let hidden = oracle_encode(p, &packed).0;
                    (packed, hidden)
                }
            };
            let mut positions = Vec::new();
            let mut originals = Vec::new();
            for e in &inst.mask_plan[0] {
                if e.position() < packed.anchor_kept {
                    positions.push(packed.anchor_offset + e.position());
                    originals.push(e.original() as usize);
                }
            }
            for e in &inst.mask_plan[1 + inst.true_index] {
                if e.position() < packed.target_kept {
                    positions.push(packed.target_offset + e.position());
                    originals.push(e.original() as usize);
                }
            }
            oracle_mlm(p, &hidden, &positions, &originals)
        } else {
            0.0
        };
        total += contrastive + lambda * mlm;
    }
    total / batch.len() as f64
}
