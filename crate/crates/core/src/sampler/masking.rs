//! Dynamic token masking with a BERT-style 80/10/10 action split.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{NUM_SPECIALS, MASK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

/// One masked position: (position, action, original id). Serialized as a
/// JSON triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEntry(pub usize, pub MaskAction, pub u32);

impl MaskEntry {
    pub fn position(&self) -> usize {
        self.0
    }
    pub fn action(&self) -> MaskAction {
        self.1
    }
    pub fn original(&self) -> u32 {
        self.2
    }
}

pub type MaskPlan = Vec<MaskEntry>;

/// Selects round(rate × eligible) positions without replacement via a seeded
/// shuffle; 80% become MASK, 10% a uniform random non-special id, 10% keep
/// their token. Special ids are never eligible. The plan records originals
/// for loss computation; entries are sorted by position.
pub fn apply_masking(
    token_ids: &[u32],
    mask_rate: f64,
    vocab_size: usize,
    stream_seed: u64,
) -> (Vec<u32>, MaskPlan) {
    let mut masked = token_ids.to_vec();
    let eligible: Vec<usize> = token_ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| id as usize >= NUM_SPECIALS)
        .map(|(i, _)| i)
        .collect();
    let n_select = (mask_rate * eligible.len() as f64).round() as usize;
    if n_select == 0 {
        return (masked, Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let mut order = eligible;
    order.shuffle(&mut rng);
    order.truncate(n_select);
    order.sort_unstable();
    let mut plan = Vec::with_capacity(n_select);
    for pos in order {
        let original = masked[pos];
        let roll: f64 = rng.random();
        let action = if roll < 0.8 {
            masked[pos] = MASK;
            MaskAction::Mask
        } else if roll < 0.9 {
            masked[pos] = rng.random_range(NUM_SPECIALS as u32..vocab_size as u32);
            MaskAction::Random
        } else {
            MaskAction::Keep
        };
        plan.push(MaskEntry(pos, action, original));
    }
    (masked, plan)
}

/// Restores the original tokens recorded in a plan.
pub fn unmask(token_ids: &[u32], plan: &MaskPlan) -> Vec<u32> {
    let mut raw = token_ids.to_vec();
    for entry in plan {
        raw[entry.position()] = entry.original();
    }
    raw
}
