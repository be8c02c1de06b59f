//! Transformer encoder with anchor/candidate coupling variants and
//! per-distance scoring heads.

pub mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tape, Tensor, Var};
use crate::sampler::{pack_pair, pack_single, WindowConfig};
use crate::seeding::derive_stream_seed;

/// How the anchor and a candidate are fed to the encoder: jointly with a
/// separate anchor pass (combined), both separately (isolated), or only
/// jointly with vector heads (uni).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    Combined,
    Isolated,
    Uni,
}

impl std::fmt::Display for Coupling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coupling::Combined => write!(f, "combined"),
            Coupling::Isolated => write!(f, "isolated"),
            Coupling::Uni => write!(f, "uni"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub coupling: Coupling,
    #[serde(rename = "K")]
    pub k_max: usize,
    /// Truncated-normal stddev for weight initialization.
    #[serde(default = "default_init_sigma")]
    pub init_sigma: f64,
}

fn default_init_sigma() -> f64 {
    0.02
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            hidden: 128,
            heads: 4,
            intermediate: 512,
            vocab_size: 8192,
            max_positions: 128,
            coupling: Coupling::Combined,
            k_max: 4,
            init_sigma: default_init_sigma(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden ({}) must be divisible by heads ({})",
                self.hidden, self.heads
            )));
        }
        if self.layers == 0 || self.intermediate == 0 {
            return Err(Error::InvalidConfig(
                "layers and intermediate must be positive".into(),
            ));
        }
        if self.vocab_size < crate::corpus::NUM_SPECIALS + 1 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} too small",
                self.vocab_size
            )));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        if !(self.init_sigma > 0.0) || self.init_sigma > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "init_sigma must be in (0, 1], got {}",
                self.init_sigma
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn num_distance_heads(&self) -> usize {
        2 * self.k_max
    }

    /// Canonical (name, shape) list; checkpoint order and the optimizer's
    /// flat parameter order both follow it.
    pub fn parameter_schema(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        let mut names = vec![
            ("token_embeddings".to_string(), vec![self.vocab_size, h]),
            ("position_embeddings".to_string(), vec![self.max_positions, h]),
            ("segment_embeddings".to_string(), vec![2, h]),
            ("embedding_ln_gamma".to_string(), vec![h]),
            ("embedding_ln_beta".to_string(), vec![h]),
        ];
        for i in 0..self.layers {
            for (suffix, shape) in [
                ("attn_q_w", vec![h, h]),
                ("attn_q_b", vec![h]),
                ("attn_k_w", vec![h, h]),
                ("attn_k_b", vec![h]),
                ("attn_v_w", vec![h, h]),
                ("attn_v_b", vec![h]),
                ("attn_out_w", vec![h, h]),
                ("attn_out_b", vec![h]),
                ("attn_ln_gamma", vec![h]),
                ("attn_ln_beta", vec![h]),
                ("ffn_in_w", vec![h, self.intermediate]),
                ("ffn_in_b", vec![self.intermediate]),
                ("ffn_out_w", vec![self.intermediate, h]),
                ("ffn_out_b", vec![h]),
                ("ffn_ln_gamma", vec![h]),
                ("ffn_ln_beta", vec![h]),
            ] {
                names.push((format!("layer{i}.{suffix}"), shape));
            }
        }
        names.push(("pooler_w".to_string(), vec![h, h]));
        names.push(("pooler_b".to_string(), vec![h]));
        names.push(("mlm_dense_w".to_string(), vec![h, h]));
        names.push(("mlm_dense_b".to_string(), vec![h]));
        names.push(("mlm_ln_gamma".to_string(), vec![h]));
        names.push(("mlm_ln_beta".to_string(), vec![h]));
        names.push(("mlm_output_bias".to_string(), vec![self.vocab_size]));
        for k in self.signed_ks() {
            let shape = match self.coupling {
                Coupling::Uni => vec![h],
                _ => vec![h, h],
            };
            names.push((format!("distance_head_{k}"), shape));
        }
        names.push(("pair_cls_w".to_string(), vec![h, 2]));
        names.push(("pair_cls_b".to_string(), vec![2]));
        names
    }

    pub fn signed_ks(&self) -> Vec<i32> {
        let k = self.k_max as i32;
        (-k..=k).filter(|&v| v != 0).collect()
    }

    pub fn head_index(&self, k: i32) -> Result<usize> {
        let km = self.k_max as i32;
        if k == 0 || k.abs() > km {
            return Err(Error::InvalidConfig(format!(
                "distance k must be in -{km}..=-1 or 1..={km}, got {k}"
            )));
        }
        Ok(if k < 0 {
            (k + km) as usize
        } else {
            (km + k - 1) as usize
        })
    }
}

/// All encoder weights as flat tensors in schema order.
#[derive(Clone, Debug)]
pub struct EncoderParams<F: Scalar> {
    pub config: EncoderConfig,
    tensors: Vec<Tensor<F>>,
}

/// Index of the first distance head inside the flat tensor list.
fn distance_head_base(config: &EncoderConfig) -> usize {
    5 + config.layers * 16 + 7
}

impl<F: Scalar> EncoderParams<F> {
    /// Random initialization: truncated normal (sigma 0.02, cut at 2 sigma)
    /// for matrices and embeddings, ones/zeros for layer norms, zeros for
    /// biases and for every scoring head (so the initial contrastive loss is
    /// exactly ln C).
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = config.init_sigma;
        let normal = Normal::new(0.0f64, sigma).expect("valid sigma");
        let mut trunc = move || loop {
            let v = normal.sample(&mut rng);
            if v.abs() <= 2.0 * sigma {
                return v;
            }
        };
        let tensors = config
            .parameter_schema()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let is_gamma = name.ends_with("gamma");
                let is_bias = name.ends_with("_b")
                    || name.ends_with("beta")
                    || name.ends_with("_bias");
                let is_zero_head =
                    name.starts_with("distance_head_") || name.starts_with("pair_cls");
                let data: Vec<F> = if is_gamma {
                    vec![F::one(); n]
                } else if is_bias || is_zero_head {
                    vec![F::zero(); n]
                } else {
                    (0..n).map(|_| F::from_f64(trunc())).collect()
                };
                Tensor::new(shape, data).expect("schema shape")
            })
            .collect();
        Ok(EncoderParams {
            config: config.clone(),
            tensors,
        })
    }

    pub fn from_tensors(config: EncoderConfig, tensors: Vec<Tensor<F>>) -> Result<Self> {
        let schema = config.parameter_schema();
        if schema.len() != tensors.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameter tensors, got {}",
                schema.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in schema.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, config requires {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(EncoderParams { config, tensors })
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor<F>> {
        self.tensors
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn to_f64(&self) -> EncoderParams<f64> {
        EncoderParams {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|t| t.to_f64_tensor()).collect(),
        }
    }

    pub fn to_f32(&self) -> EncoderParams<f32> {
        EncoderParams {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|t| t.to_f32_tensor()).collect(),
        }
    }

    /// Mounts every parameter on a tape as gradient-receiving leaves
    /// (training) or constants (frozen inference).
    pub fn mount(&self, tape: &mut Tape<F>, trainable: bool) -> EncoderVars {
        let vars: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        EncoderVars {
            config: self.config.clone(),
            vars,
        }
    }
}

/// Tape handles for mounted parameters, addressed through the schema layout.
#[derive(Clone)]
pub struct EncoderVars {
    pub config: EncoderConfig,
    vars: Vec<Var>,
}

struct LayerVars {
    q_w: Var,
    q_b: Var,
    k_w: Var,
    k_b: Var,
    v_w: Var,
    v_b: Var,
    out_w: Var,
    out_b: Var,
    attn_ln_g: Var,
    attn_ln_b: Var,
    ffn_in_w: Var,
    ffn_in_b: Var,
    ffn_out_w: Var,
    ffn_out_b: Var,
    ffn_ln_g: Var,
    ffn_ln_b: Var,
}

impl EncoderVars {
    pub fn all(&self) -> &[Var] {
        &self.vars
    }

    fn token_emb(&self) -> Var {
        self.vars[0]
    }
    fn pos_emb(&self) -> Var {
        self.vars[1]
    }
    fn seg_emb(&self) -> Var {
        self.vars[2]
    }
    fn emb_ln(&self) -> (Var, Var) {
        (self.vars[3], self.vars[4])
    }

    fn layer(&self, i: usize) -> LayerVars {
        let b = 5 + i * 16;
        LayerVars {
            q_w: self.vars[b],
            q_b: self.vars[b + 1],
            k_w: self.vars[b + 2],
            k_b: self.vars[b + 3],
            v_w: self.vars[b + 4],
            v_b: self.vars[b + 5],
            out_w: self.vars[b + 6],
            out_b: self.vars[b + 7],
            attn_ln_g: self.vars[b + 8],
            attn_ln_b: self.vars[b + 9],
            ffn_in_w: self.vars[b + 10],
            ffn_in_b: self.vars[b + 11],
            ffn_out_w: self.vars[b + 12],
            ffn_out_b: self.vars[b + 13],
            ffn_ln_g: self.vars[b + 14],
            ffn_ln_b: self.vars[b + 15],
        }
    }

    fn pooler(&self) -> (Var, Var) {
        let b = 5 + self.config.layers * 16;
        (self.vars[b], self.vars[b + 1])
    }

    fn mlm(&self) -> (Var, Var, Var, Var, Var) {
        let b = 5 + self.config.layers * 16 + 2;
        (
            self.vars[b],
            self.vars[b + 1],
            self.vars[b + 2],
            self.vars[b + 3],
            self.vars[b + 4],
        )
    }

    pub fn distance_head(&self, k: i32) -> Result<Var> {
        let idx = self.config.head_index(k)?;
        Ok(self.vars[distance_head_base(&self.config) + idx])
    }

    pub fn pair_cls(&self) -> (Var, Var) {
        let b = distance_head_base(&self.config) + self.config.num_distance_heads();
        (self.vars[b], self.vars[b + 1])
    }
}

/// Dropout configuration for one encoder pass; seeds for individual dropout
/// sites are derived from `seed` in a fixed order. Absent in evaluation and
/// gradient-check modes.
#[derive(Clone, Copy, Debug)]
pub struct DropoutCtx {
    pub rate: f64,
    pub seed: u64,
}

struct DropoutSites {
    ctx: Option<DropoutCtx>,
    counter: u64,
}

impl DropoutSites {
    fn new(ctx: Option<DropoutCtx>) -> Self {
        DropoutSites { ctx, counter: 0 }
    }

    fn apply<F: Scalar>(&mut self, tape: &mut Tape<F>, x: Var) -> Var {
        match self.ctx {
            None => x,
            Some(DropoutCtx { rate, seed }) => {
                let site_seed = derive_stream_seed(&[seed, self.counter]);
                self.counter += 1;
                tape.dropout(x, rate, site_seed)
            }
        }
    }
}

/// Runs the post-layer-norm transformer stack over the non-pad prefix of a
/// packed input and returns (sequence hiddens [eff x H], pooled [1 x H]).
///
/// The attention mask must mark padding as a suffix of zeros; pad positions
/// are never computed, which leaves every real position's output identical
/// to the full padded computation.
pub fn encode<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    input_ids: &[u32],
    segment_ids: &[u8],
    attention_mask: &[u8],
    dropout: Option<DropoutCtx>,
) -> Result<(Var, Var)> {
    let cfg = &vars.config;
    if input_ids.len() != segment_ids.len() || input_ids.len() != attention_mask.len() {
        return Err(Error::InvalidShape {
            op: "encode",
            msg: format!(
                "ids/segments/mask lengths differ: {}/{}/{}",
                input_ids.len(),
                segment_ids.len(),
                attention_mask.len()
            ),
        });
    }
    if input_ids.len() > cfg.max_positions {
        return Err(Error::InvalidShape {
            op: "encode",
            msg: format!(
                "input length {} exceeds max positions {}",
                input_ids.len(),
                cfg.max_positions
            ),
        });
    }
    let eff = attention_mask.iter().take_while(|&&m| m == 1).count();
    if eff == 0 || attention_mask[eff..].iter().any(|&m| m != 0) {
        return Err(Error::InvalidShape {
            op: "encode",
            msg: "attention mask must be ones followed by a zero suffix".into(),
        });
    }
    if let Some(&bad) = input_ids[..eff].iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::InvalidShape {
            op: "encode",
            msg: format!("token id {bad} outside vocabulary of {}", cfg.vocab_size),
        });
    }

    let mut drop = DropoutSites::new(dropout);
    let (h, a, dh) = (cfg.hidden, cfg.heads, cfg.head_dim());

    let tok = tape.gather_rows(
        vars.token_emb(),
        input_ids[..eff].iter().map(|&i| i as usize).collect(),
    )?;
    let pos = tape.gather_rows(vars.pos_emb(), (0..eff).collect())?;
    let seg = tape.gather_rows(
        vars.seg_emb(),
        segment_ids[..eff].iter().map(|&s| s as usize).collect(),
    )?;
    let sum = tape.add(tok, pos)?;
    let sum = tape.add(sum, seg)?;
    let (g, b) = vars.emb_ln();
    let mut x = tape.layer_norm(sum, g, b, 1e-12)?;
    x = drop.apply(tape, x);

    for i in 0..cfg.layers {
        let l = vars.layer(i);
        let q = tape.matmul(x, l.q_w)?;
        let q = tape.add_bias(q, l.q_b)?;
        let k = tape.matmul(x, l.k_w)?;
        let k = tape.add_bias(k, l.k_b)?;
        let v = tape.matmul(x, l.v_w)?;
        let v = tape.add_bias(v, l.v_b)?;
        let qh = tape.reshape(q, vec![eff, a, dh])?;
        let qh = tape.transpose(qh, 0, 1)?; // [A, S, dh]
        let kh = tape.reshape(k, vec![eff, a, dh])?;
        let kh = tape.transpose(kh, 0, 1)?;
        let kt = tape.transpose(kh, 1, 2)?; // [A, dh, S]
        let vh = tape.reshape(v, vec![eff, a, dh])?;
        let vh = tape.transpose(vh, 0, 1)?;
        let scores = tape.bmm(qh, kt)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let probs = tape.softmax(scores, 2)?;
        let probs = drop.apply(tape, probs);
        let ctx = tape.bmm(probs, vh)?; // [A, S, dh]
        let ctx = tape.transpose(ctx, 0, 1)?;
        let ctx = tape.reshape(ctx, vec![eff, h])?;
        let attn = tape.matmul(ctx, l.out_w)?;
        let attn = tape.add_bias(attn, l.out_b)?;
        let attn = drop.apply(tape, attn);
        let res = tape.add(x, attn)?;
        x = tape.layer_norm(res, l.attn_ln_g, l.attn_ln_b, 1e-12)?;

        let ffn = tape.matmul(x, l.ffn_in_w)?;
        let ffn = tape.add_bias(ffn, l.ffn_in_b)?;
        let ffn = tape.gelu(ffn);
        let ffn = tape.matmul(ffn, l.ffn_out_w)?;
        let ffn = tape.add_bias(ffn, l.ffn_out_b)?;
        let ffn = drop.apply(tape, ffn);
        let res = tape.add(x, ffn)?;
        x = tape.layer_norm(res, l.ffn_ln_g, l.ffn_ln_b, 1e-12)?;
    }

    let first = tape.slice(x, 0, 0, 1)?;
    let (pw, pb) = vars.pooler();
    let pooled = tape.matmul(first, pw)?;
    let pooled = tape.add_bias(pooled, pb)?;
    let pooled = tape.tanh(pooled);
    Ok((x, pooled))
}

/// Masked-token logits over the vocabulary for the given packed positions:
/// dense + gelu + layer norm, then a projection tied to the token embedding
/// table plus an output bias.
pub fn mlm_logits<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    hidden: Var,
    positions: &[usize],
) -> Result<Var> {
    let (dense_w, dense_b, ln_g, ln_b, out_bias) = vars.mlm();
    let rows = tape.gather_rows(hidden, positions.to_vec())?;
    let d = tape.matmul(rows, dense_w)?;
    let d = tape.add_bias(d, dense_b)?;
    let d = tape.gelu(d);
    let d = tape.layer_norm(d, ln_g, ln_b, 1e-12)?;
    let logits = tape.matmul_bt(d, vars.token_emb())?;
    tape.add_bias(logits, out_bias)
}

/// Log-bilinear distance score: tᵀ W_k c for matrix heads, tᵀ w_k for the
/// uni coupling's vector heads. Returns a [1, 1] tensor.
pub fn score<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    c: Option<Var>,
    t: Var,
    k: i32,
) -> Result<Var> {
    let head = vars.distance_head(k)?;
    match vars.config.coupling {
        Coupling::Uni => {
            let h = vars.config.hidden;
            let w = tape.reshape(head, vec![h, 1])?;
            tape.matmul(t, w)
        }
        Coupling::Combined | Coupling::Isolated => {
            let c = c.ok_or_else(|| {
                Error::InvalidConfig("matrix-head scoring needs the anchor vector c".into())
            })?;
            let tw = tape.matmul(t, head)?;
            let ct = tape.transpose(c, 0, 1)?;
            tape.matmul(tw, ct)
        }
    }
}

/// Encodes an (anchor, candidate) pair under the configured coupling,
/// producing the target vector t and, for couplings that use one, the
/// anchor vector c.
pub fn represent<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    window: &WindowConfig,
    anchor_ids: &[u32],
    candidate_ids: &[u32],
    dropout: Option<DropoutCtx>,
) -> Result<(Option<Var>, Var)> {
    let sub = |tag: u64| {
        dropout.map(|d| DropoutCtx {
            rate: d.rate,
            seed: derive_stream_seed(&[d.seed, tag]),
        })
    };
    match vars.config.coupling {
        Coupling::Combined => {
            let pair = pack_pair(anchor_ids, candidate_ids, window.max_seq);
            let (_, t) = encode(
                tape,
                vars,
                &pair.ids,
                &pair.segment_ids,
                &pair.attention_mask,
                sub(0),
            )?;
            let single = pack_single(anchor_ids, window.max_seq);
            let (_, c) = encode(
                tape,
                vars,
                &single.ids,
                &single.segment_ids,
                &single.attention_mask,
                sub(1),
            )?;
            Ok((Some(c), t))
        }
        Coupling::Isolated => {
            let cand = pack_single(candidate_ids, window.max_seq);
            let (_, t) = encode(
                tape,
                vars,
                &cand.ids,
                &cand.segment_ids,
                &cand.attention_mask,
                sub(0),
            )?;
            let single = pack_single(anchor_ids, window.max_seq);
            let (_, c) = encode(
                tape,
                vars,
                &single.ids,
                &single.segment_ids,
                &single.attention_mask,
                sub(1),
            )?;
            Ok((Some(c), t))
        }
        Coupling::Uni => {
            let pair = pack_pair(anchor_ids, candidate_ids, window.max_seq);
            let (_, t) = encode(
                tape,
                vars,
                &pair.ids,
                &pair.segment_ids,
                &pair.attention_mask,
                sub(0),
            )?;
            Ok((None, t))
        }
    }
}
