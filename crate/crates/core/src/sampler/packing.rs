//! BERT-format input packing: [CLS] span [SEP] (span [SEP]) padded to a
//! fixed length.

use crate::corpus::{CLS, PAD, SEP};

/// A packed input sequence. `anchor_offset`/`target_offset` locate the kept
/// span tokens inside `ids` so mask plans can be mapped to packed positions;
/// `anchor_kept`/`target_kept` say how many tokens survived truncation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedSeq {
    pub ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
    pub anchor_offset: usize,
    pub anchor_kept: usize,
    pub target_offset: usize,
    pub target_kept: usize,
}

impl PackedSeq {
    /// Number of real (non-pad) positions; pads are always a suffix.
    pub fn effective_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Packs `[CLS] anchor [SEP] target [SEP]`, truncating from the end before
/// padding: the anchor keeps at most max_seq-3 tokens (never empty), the
/// target keeps whatever room remains. Segment id is 0 through the first
/// [SEP] and 1 afterwards; pads carry segment 0 and attention mask 0.
pub fn pack_pair(anchor: &[u32], target: &[u32], max_seq: usize) -> PackedSeq {
    debug_assert!(max_seq >= 4, "max_seq must fit [CLS] a [SEP] [SEP]");
    let anchor_kept = anchor.len().min(max_seq - 3);
    let target_kept = target.len().min(max_seq - 3 - anchor_kept);
    let mut ids = Vec::with_capacity(max_seq);
    ids.push(CLS);
    ids.extend_from_slice(&anchor[..anchor_kept]);
    ids.push(SEP);
    let target_offset = ids.len();
    ids.extend_from_slice(&target[..target_kept]);
    ids.push(SEP);
    let used = ids.len();
    let mut segment_ids = vec![0u8; max_seq];
    for s in segment_ids.iter_mut().take(used).skip(anchor_kept + 2) {
        *s = 1;
    }
    let mut attention_mask = vec![0u8; max_seq];
    attention_mask[..used].fill(1);
    ids.resize(max_seq, PAD);
    PackedSeq {
        ids,
        segment_ids,
        attention_mask,
        anchor_offset: 1,
        anchor_kept,
        target_offset,
        target_kept,
    }
}

/// Packs a single span as `[CLS] span [SEP]`, segment 0 throughout.
pub fn pack_single(span: &[u32], max_seq: usize) -> PackedSeq {
    debug_assert!(max_seq >= 3);
    let kept = span.len().min(max_seq - 2);
    let mut ids = Vec::with_capacity(max_seq);
    ids.push(CLS);
    ids.extend_from_slice(&span[..kept]);
    ids.push(SEP);
    let used = ids.len();
    let mut attention_mask = vec![0u8; max_seq];
    attention_mask[..used].fill(1);
    ids.resize(max_seq, PAD);
    PackedSeq {
        ids,
        segment_ids: vec![0u8; max_seq],
        attention_mask,
        anchor_offset: 1,
        anchor_kept: kept,
        target_offset: used,
        target_kept: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_layout_matches_worked_example() {
        let p = pack_pair(&[5, 6], &[7], 8);
        assert_eq!(p.ids, vec![2, 5, 6, 3, 7, 3, 0, 0]);
        assert_eq!(p.segment_ids, vec![0, 0, 0, 0, 1, 1, 0, 0]);
        assert_eq!(p.attention_mask, vec![1, 1, 1, 1, 1, 1, 0, 0]);
        assert_eq!(p.effective_len(), 6);
        assert_eq!((p.anchor_offset, p.anchor_kept), (1, 2));
        assert_eq!((p.target_offset, p.target_kept), (4, 1));
    }

    #[test]
    fn single_span_layout() {
        let p = pack_single(&[5], 4);
        assert_eq!(p.ids, vec![2, 5, 3, 0]);
        assert_eq!(p.segment_ids, vec![0, 0, 0, 0]);
    }

    #[test]
    fn over_length_pair_truncates_from_the_end_and_ends_with_sep() {
        let anchor: Vec<u32> = (5..205).collect();
        let target: Vec<u32> = (205..405).collect();
        let p = pack_pair(&anchor, &target, 128);
        assert_eq!(p.ids.len(), 128);
        assert_eq!(p.effective_len(), 128);
        assert_eq!(*p.ids.last().unwrap(), SEP);
        assert_eq!(p.anchor_kept, 125);
        assert_eq!(p.target_kept, 0);
        assert!(p.anchor_kept >= 1, "anchor never empty");
    }

    #[test]
    fn moderate_overflow_trims_target_only() {
        let anchor: Vec<u32> = (5..15).collect(); // 10
        let target: Vec<u32> = (20..40).collect(); // 20
        let p = pack_pair(&anchor, &target, 16);
        assert_eq!(p.anchor_kept, 10);
        assert_eq!(p.target_kept, 3);
        assert_eq!(p.effective_len(), 16);
        assert_eq!(p.ids[15], SEP);
    }
}
