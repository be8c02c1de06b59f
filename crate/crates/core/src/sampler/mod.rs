//! Training-instance sampling: anchor placement, signed-distance targets,
//! hard and random negatives, dynamic masking, and NSP/BSO baseline pairs.

pub mod masking;
pub mod packing;
pub mod shards;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use masking::{apply_masking, unmask, MaskAction, MaskEntry, MaskPlan};
pub use packing::{pack_pair, pack_single, PackedSeq};
pub use shards::{generate_shards, read_shards, write_shards, ShardConfig, ShardData, ShardMode};

use crate::corpus::{Corpus, ParagraphTokens};
use crate::error::{Error, Result};
use crate::seeding::derive_stream_seed;

/// Sampling geometry and candidate-set sizing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Maximum signed distance K; targets sit at k in {-K..-1, 1..K}.
    #[serde(rename = "K")]
    pub k_max: usize,
    pub anchor_len: usize,
    pub target_len: usize,
    /// Distances sampled per anchor (at most 2K).
    pub ks_per_paragraph: usize,
    pub num_hard: usize,
    pub num_random: usize,
    pub mask_rate: f64,
    pub max_seq: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            k_max: 4,
            anchor_len: 4,
            target_len: 3,
            ks_per_paragraph: 4,
            num_hard: 3,
            num_random: 28,
            mask_rate: 0.15,
            max_seq: 128,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max < 1 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        if self.ks_per_paragraph == 0 || self.ks_per_paragraph > 2 * self.k_max {
            return Err(Error::InvalidConfig(format!(
                "ks_per_paragraph must be in 1..={}, got {}",
                2 * self.k_max,
                self.ks_per_paragraph
            )));
        }
        if self.anchor_len == 0 || self.target_len == 0 {
            return Err(Error::InvalidConfig(
                "anchor_len and target_len must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::InvalidConfig(format!(
                "mask_rate must be in [0, 1], got {}",
                self.mask_rate
            )));
        }
        if self.max_seq < 8 {
            return Err(Error::InvalidConfig(format!(
                "max_seq must be at least 8, got {}",
                self.max_seq
            )));
        }
        Ok(())
    }

    /// Candidate-set size: true target + hard + random negatives.
    pub fn candidate_count(&self) -> usize {
        1 + self.num_hard + self.num_random
    }

    /// All signed distances in {-K..-1, 1..K}, ascending.
    pub fn signed_ks(&self) -> Vec<i32> {
        let k = self.k_max as i32;
        (-k..=k).filter(|&v| v != 0).collect()
    }

    /// Dense index of a signed distance in 0..2K.
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

/// Sentence span inside one paragraph; end is inclusive and 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanRef {
    pub doc_id: u64,
    pub paragraph: usize,
    pub start: usize,
    pub end: usize,
}

impl SpanRef {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &SpanRef) -> bool {
        self.doc_id == other.doc_id
            && self.paragraph == other.paragraph
            && self.start <= other.end
            && other.start <= self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[serde(rename = "true")]
    TrueTarget,
    Hard,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanTokens {
    pub span: SpanRef,
    pub token_ids: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token_ids: Vec<u32>,
    pub provenance: Provenance,
    pub origin: SpanRef,
}

/// One contrastive training instance. Token ids are stored masked;
/// `mask_plan[0]` covers the anchor and `mask_plan[1 + j]` candidate j, with
/// positions relative to each raw (pre-packing) sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub anchor: SpanTokens,
    pub k: i32,
    pub candidates: Vec<Candidate>,
    pub true_index: usize,
    pub mask_plan: Vec<MaskPlan>,
}

/// One NSP/BSO baseline pair, stored masked like [`TrainingInstance`];
/// `mask_plan[0]` covers `first`, `mask_plan[1]` covers `second`.
/// Label 0 is the positive class (same-source / in-order), 1 the negative
/// (random second span / reversed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairInstance {
    pub first: SpanTokens,
    pub second: SpanTokens,
    pub label: u8,
    pub mask_plan: Vec<MaskPlan>,
}

/// Per-epoch seed derivation: distinct epochs give distinct, reproducible
/// per-paragraph streams.
#[derive(Clone, Copy, Debug)]
pub struct EpochSeed {
    pub global: u64,
    pub epoch: u64,
}

impl EpochSeed {
    pub fn new(global: u64, epoch: u64) -> Self {
        EpochSeed { global, epoch }
    }

    pub fn stream_for(&self, doc_id: u64, paragraph: usize) -> u64 {
        derive_stream_seed(&[self.global, doc_id, paragraph as u64, self.epoch])
    }
}

/// Places the target span for a signed distance k: the distance is the index
/// difference between the near boundaries, so |k|-1 sentences are omitted
/// between the spans. Out-of-bounds placements are a signaled error, never a
/// clipped span.
pub fn place_target(
    anchor: &SpanRef,
    k: i32,
    cfg: &WindowConfig,
    paragraph_len: usize,
) -> Result<SpanRef> {
    cfg.head_index(k)?; // validates k != 0, |k| <= K
    let target_len = cfg.target_len as i64;
    let (start, end) = if k > 0 {
        let start = anchor.end as i64 + k as i64;
        (start, start + target_len - 1)
    } else {
        let end = anchor.start as i64 + k as i64;
        (end - target_len + 1, end)
    };
    if start < 0 || end >= paragraph_len as i64 {
        return Err(Error::InfeasiblePlacement {
            anchor_start: anchor.start,
            anchor_end: anchor.end,
            k,
            target_len: cfg.target_len,
            paragraph_len,
        });
    }
    Ok(SpanRef {
        doc_id: anchor.doc_id,
        paragraph: anchor.paragraph,
        start: start as usize,
        end: end as usize,
    })
}

/// Exactly the signed distances for which [`place_target`] succeeds.
pub fn enumerate_feasible_k(
    paragraph_len: usize,
    anchor: &SpanRef,
    cfg: &WindowConfig,
) -> Vec<i32> {
    cfg.signed_ks()
        .into_iter()
        .filter(|&k| place_target(anchor, k, cfg, paragraph_len).is_ok())
        .collect()
}

fn span_token_ids(paragraph: &ParagraphTokens, span: &SpanRef) -> Vec<u32> {
    paragraph[span.start..=span.end].concat()
}

/// Flat index of every target_len span in the corpus, used to draw random
/// negatives uniformly from other documents.
pub struct SpanIndex {
    spans: Vec<(usize, usize, usize)>, // (doc index, paragraph, start)
    per_doc: Vec<usize>,
}

impl SpanIndex {
    pub fn build(corpus: &Corpus, target_len: usize) -> Self {
        let mut spans = Vec::new();
        let mut per_doc = vec![0usize; corpus.documents.len()];
        for (di, doc) in corpus.documents.iter().enumerate() {
            for (pi, para) in doc.paragraphs.iter().enumerate() {
                if para.len() >= target_len {
                    for start in 0..=para.len() - target_len {
                        spans.push((di, pi, start));
                        per_doc[di] += 1;
                    }
                }
            }
        }
        SpanIndex { spans, per_doc }
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    fn has_spans_outside(&self, doc_idx: usize) -> bool {
        self.spans.len() > self.per_doc.get(doc_idx).copied().unwrap_or(0)
    }

    /// Uniform draw over spans of documents other than `exclude_doc_idx`.
    fn sample_other_doc(&self, rng: &mut ChaCha8Rng, exclude_doc_idx: usize) -> (usize, usize, usize) {
        loop {
            let pick = self.spans[rng.random_range(0..self.spans.len())];
            if pick.0 != exclude_doc_idx {
                return pick;
            }
        }
    }
}

struct NegativeDraw {
    token_ids: Vec<u32>,
    origin: SpanRef,
}

fn draw_random_negative(
    corpus: &Corpus,
    index: &SpanIndex,
    rng: &mut ChaCha8Rng,
    exclude_doc_idx: usize,
    target_len: usize,
) -> NegativeDraw {
    let (di, pi, start) = index.sample_other_doc(rng, exclude_doc_idx);
    let span = SpanRef {
        doc_id: corpus.documents[di].doc_id,
        paragraph: pi,
        start,
        end: start + target_len - 1,
    };
    NegativeDraw {
        token_ids: span_token_ids(corpus.paragraph(di, pi), &span),
        origin: span,
    }
}

fn mask_sequence(
    ids: &[u32],
    cfg: &WindowConfig,
    vocab_size: usize,
    stream_seed: u64,
    seq_tag: u64,
) -> (Vec<u32>, MaskPlan) {
    apply_masking(
        ids,
        cfg.mask_rate,
        vocab_size,
        derive_stream_seed(&[stream_seed, 0x6d61_736b, seq_tag]),
    )
}

/// Builds the contrastive instances for one paragraph: one anchor drawn
/// uniformly among starts with at least one feasible distance, then
/// min(ks_per_paragraph, |feasible|) distances without replacement. Hard
/// negatives prefer spans that are valid targets at other feasible
/// distances, then any distinct same-paragraph span, then random negatives.
/// Short paragraphs (< anchor_len + target_len + 1 sentences) yield nothing.
///
/// Pure function of (corpus, location, cfg, stream_seed).
pub fn build_instances(
    corpus: &Corpus,
    span_index: &SpanIndex,
    doc_idx: usize,
    para_idx: usize,
    cfg: &WindowConfig,
    vocab_size: usize,
    stream_seed: u64,
) -> Result<Vec<TrainingInstance>> {
    let doc = &corpus.documents[doc_idx];
    let paragraph = &doc.paragraphs[para_idx];
    let n = paragraph.len();
    if n < cfg.anchor_len + cfg.target_len + 1 {
        return Ok(Vec::new());
    }
    if !span_index.has_spans_outside(doc_idx) {
        return Err(Error::InvalidConfig(
            "random negatives need spans in at least one other document".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);

    // Anchor start drawn uniformly from positions with >= 1 feasible k.
    let viable_starts: Vec<usize> = (0..=n - cfg.anchor_len)
        .filter(|&s| {
            let anchor = SpanRef {
                doc_id: doc.doc_id,
                paragraph: para_idx,
                start: s,
                end: s + cfg.anchor_len - 1,
            };
            !enumerate_feasible_k(n, &anchor, cfg).is_empty()
        })
        .collect();
    if viable_starts.is_empty() {
        return Ok(Vec::new());
    }
    let anchor_start = viable_starts[rng.random_range(0..viable_starts.len())];
    let anchor_span = SpanRef {
        doc_id: doc.doc_id,
        paragraph: para_idx,
        start: anchor_start,
        end: anchor_start + cfg.anchor_len - 1,
    };
    let feasible = enumerate_feasible_k(n, &anchor_span, cfg);

    let mut drawn = feasible.clone();
    drawn.shuffle(&mut rng);
    drawn.truncate(cfg.ks_per_paragraph.min(feasible.len()));
    drawn.sort_unstable();

    let raw_anchor_ids = span_token_ids(paragraph, &anchor_span);
    let mut instances = Vec::with_capacity(drawn.len());
    for k in drawn {
        let true_span = place_target(&anchor_span, k, cfg, n)?;
        let true_ids = span_token_ids(paragraph, &true_span);

        // Hard negatives: other feasible targets first.
        let mut hard_pool: Vec<SpanRef> = feasible
            .iter()
            .filter(|&&k2| k2 != k)
            .map(|&k2| place_target(&anchor_span, k2, cfg, n).expect("feasible"))
            .collect();
        hard_pool.shuffle(&mut rng);
        hard_pool.truncate(cfg.num_hard);
        if hard_pool.len() < cfg.num_hard {
            let mut extra: Vec<SpanRef> = (0..=n - cfg.target_len)
                .map(|s| SpanRef {
                    doc_id: doc.doc_id,
                    paragraph: para_idx,
                    start: s,
                    end: s + cfg.target_len - 1,
                })
                .filter(|s| *s != true_span && !hard_pool.contains(s))
                .collect();
            extra.shuffle(&mut rng);
            extra.truncate(cfg.num_hard - hard_pool.len());
            hard_pool.extend(extra);
        }

        let mut candidates: Vec<Candidate> = Vec::with_capacity(cfg.candidate_count());
        candidates.push(Candidate {
            token_ids: true_ids,
            provenance: Provenance::TrueTarget,
            origin: true_span,
        });
        for span in &hard_pool {
            candidates.push(Candidate {
                token_ids: span_token_ids(paragraph, span),
                provenance: Provenance::Hard,
                origin: *span,
            });
        }
        while candidates.len() < cfg.candidate_count() {
            let neg = draw_random_negative(corpus, span_index, &mut rng, doc_idx, cfg.target_len);
            candidates.push(Candidate {
                token_ids: neg.token_ids,
                provenance: Provenance::Random,
                origin: neg.origin,
            });
        }
        candidates.shuffle(&mut rng);
        let true_index = candidates
            .iter()
            .position(|c| c.provenance == Provenance::TrueTarget)
            .expect("exactly one true candidate");

        // Mask every stored sequence; plans are keyed to the instance's
        // stream and distance so re-masking at a later epoch is reproducible.
        let inst_tag = (cfg.head_index(k)? as u64) << 32;
        let (anchor_masked, anchor_plan) =
            mask_sequence(&raw_anchor_ids, cfg, vocab_size, stream_seed, inst_tag);
        let mut mask_plan = vec![anchor_plan];
        let mut masked_candidates = Vec::with_capacity(candidates.len());
        for (j, cand) in candidates.into_iter().enumerate() {
            let (ids, plan) =
                mask_sequence(&cand.token_ids, cfg, vocab_size, stream_seed, inst_tag | (1 + j as u64));
            mask_plan.push(plan);
            masked_candidates.push(Candidate {
                token_ids: ids,
                ..cand
            });
        }

        instances.push(TrainingInstance {
            anchor: SpanTokens {
                span: anchor_span,
                token_ids: anchor_masked,
            },
            k,
            candidates: masked_candidates,
            true_index,
            mask_plan,
        });
    }
    Ok(instances)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    Nsp,
    Bso,
}

/// Builds NSP or BSO baseline pairs from contiguous anchor/target splits.
/// NSP replaces the second span with a random other-document span half the
/// time; BSO presents the two contiguous spans in reverse order half the
/// time. Label 0 is always the positive class.
pub fn build_pair_instances(
    corpus: &Corpus,
    span_index: &SpanIndex,
    doc_idx: usize,
    para_idx: usize,
    mode: BaselineMode,
    cfg: &WindowConfig,
    vocab_size: usize,
    stream_seed: u64,
) -> Result<Vec<PairInstance>> {
    let doc = &corpus.documents[doc_idx];
    let paragraph = &doc.paragraphs[para_idx];
    let n = paragraph.len();
    let window = cfg.anchor_len + cfg.target_len;
    if n < window {
        return Ok(Vec::new());
    }
    if mode == BaselineMode::Nsp && !span_index.has_spans_outside(doc_idx) {
        return Err(Error::InvalidConfig(
            "NSP negatives need spans in at least one other document".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_stream_seed(&[stream_seed, 0x7061_6972]));
    let mut starts: Vec<usize> = (0..=n - window).collect();
    starts.shuffle(&mut rng);
    starts.truncate(cfg.ks_per_paragraph.min(starts.len()));
    starts.sort_unstable();

    let mut pairs = Vec::with_capacity(starts.len());
    for (pair_idx, &a) in starts.iter().enumerate() {
        let first_span = SpanRef {
            doc_id: doc.doc_id,
            paragraph: para_idx,
            start: a,
            end: a + cfg.anchor_len - 1,
        };
        let second_span = SpanRef {
            doc_id: doc.doc_id,
            paragraph: para_idx,
            start: a + cfg.anchor_len,
            end: a + window - 1,
        };
        let negative = rng.random::<f64>() < 0.5;
        let (first, second, label) = match (mode, negative) {
            (_, false) => (
                SpanTokens {
                    span: first_span,
                    token_ids: span_token_ids(paragraph, &first_span),
                },
                SpanTokens {
                    span: second_span,
                    token_ids: span_token_ids(paragraph, &second_span),
                },
                0u8,
            ),
            (BaselineMode::Nsp, true) => {
                let neg =
                    draw_random_negative(corpus, span_index, &mut rng, doc_idx, cfg.target_len);
                (
                    SpanTokens {
                        span: first_span,
                        token_ids: span_token_ids(paragraph, &first_span),
                    },
                    SpanTokens {
                        span: neg.origin,
                        token_ids: neg.token_ids,
                    },
                    1u8,
                )
            }
            (BaselineMode::Bso, true) => (
                SpanTokens {
                    span: second_span,
                    token_ids: span_token_ids(paragraph, &second_span),
                },
                SpanTokens {
                    span: first_span,
                    token_ids: span_token_ids(paragraph, &first_span),
                },
                1u8,
            ),
        };
        let tag = (pair_idx as u64) << 32;
        let (first_ids, first_plan) =
            mask_sequence(&first.token_ids, cfg, vocab_size, stream_seed, tag);
        let (second_ids, second_plan) =
            mask_sequence(&second.token_ids, cfg, vocab_size, stream_seed, tag | 1);
        pairs.push(PairInstance {
            first: SpanTokens {
                span: first.span,
                token_ids: first_ids,
            },
            second: SpanTokens {
                span: second.span,
                token_ids: second_ids,
            },
            label,
            mask_plan: vec![first_plan, second_plan],
        });
    }
    Ok(pairs)
}
