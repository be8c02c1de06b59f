//! Discourse-marker frequency analysis over model-disagreement sets.
//!
//! For two prediction files A and B covering the same probe examples, the
//! two disagreement sets are "A correct and B wrong" and "B correct and A
//! wrong". For each set, a marker's occurrence rate is its token count in
//! the set divided by the set's total token count; the relative change is
//! rate_set / rate_train - 1 against the training-corpus rate, and the
//! headline number is the count-weighted average of those changes with the
//! training counts as weights. The placement breakdown repeats the
//! computation counting only the first (or only the second) sentence of
//! each example.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStats, DISCOURSE_MARKERS};
use crate::error::{Error, Result};
use crate::evalprobe::ProbeExample;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarkerSetReport {
    pub num_examples: usize,
    pub total_tokens: u64,
    /// Occurrence rate of each marker inside the set.
    pub rates: BTreeMap<String, f64>,
    /// Relative change of each marker's rate against the training rate
    /// (markers absent from the training corpus are omitted).
    pub changes: BTreeMap<String, f64>,
    /// Training-count-weighted average of the changes.
    pub weighted_avg_change: Option<f64>,
    /// Weighted average change counting markers only in the first sentence.
    pub first_sentence_weighted_avg_change: Option<f64>,
    /// Weighted average change counting markers only in the second sentence.
    pub second_sentence_weighted_avg_change: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarkerTable {
    pub markers: Vec<String>,
    pub train_counts: Vec<u64>,
    pub a_correct_b_wrong: MarkerSetReport,
    pub b_correct_a_wrong: MarkerSetReport,
    pub no_disagreements: bool,
}

fn marker_ids(stats: &CorpusStats) -> Vec<Option<u32>> {
    DISCOURSE_MARKERS
        .iter()
        .map(|m| {
            stats
                .tokens
                .iter()
                .position(|t| t == m)
                .map(|i| i as u32)
        })
        .collect()
}

/// Counts marker occurrences over the chosen sentences of a set.
/// `sentence_filter`: None counts all sentences, Some(i) only sentence i.
fn set_report(
    examples: &[&ProbeExample],
    ids: &[Option<u32>],
    train_counts: &[u64],
    train_total: u64,
) -> MarkerSetReport {
    let count_in = |filter: Option<usize>| -> (Vec<u64>, u64) {
        let mut counts = vec![0u64; DISCOURSE_MARKERS.len()];
        let mut total = 0u64;
        for ex in examples {
            for (si, sentence) in ex.sentences.iter().enumerate() {
                if filter.is_some_and(|want| want != si) {
                    continue;
                }
                total += sentence.len() as u64;
                for &tok in sentence {
                    for (mi, id) in ids.iter().enumerate() {
                        if *id == Some(tok) {
                            counts[mi] += 1;
                        }
                    }
                }
            }
        }
        (counts, total)
    };

    let weighted_change = |counts: &[u64], total: u64| -> Option<f64> {
        if total == 0 || train_total == 0 {
            return None;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (mi, &train_count) in train_counts.iter().enumerate() {
            if train_count == 0 {
                continue;
            }
            let rate_set = counts[mi] as f64 / total as f64;
            let rate_train = train_count as f64 / train_total as f64;
            let change = rate_set / rate_train - 1.0;
            num += train_count as f64 * change;
            den += train_count as f64;
        }
        (den > 0.0).then_some(num / den)
    };

    let (counts, total) = count_in(None);
    let (first_counts, first_total) = count_in(Some(0));
    let (second_counts, second_total) = count_in(Some(1));

    let mut rates = BTreeMap::new();
    let mut changes = BTreeMap::new();
    if total > 0 {
        for (mi, marker) in DISCOURSE_MARKERS.iter().enumerate() {
            let rate = counts[mi] as f64 / total as f64;
            rates.insert(marker.to_string(), rate);
            if train_counts[mi] > 0 && train_total > 0 {
                let rate_train = train_counts[mi] as f64 / train_total as f64;
                changes.insert(marker.to_string(), rate / rate_train - 1.0);
            }
        }
    }
    MarkerSetReport {
        num_examples: examples.len(),
        total_tokens: total,
        rates,
        changes,
        weighted_avg_change: weighted_change(&counts, total),
        first_sentence_weighted_avg_change: weighted_change(&first_counts, first_total),
        second_sentence_weighted_avg_change: weighted_change(&second_counts, second_total),
    }
}

/// Builds the marker table from probe examples with gold labels and two
/// prediction maps covering exactly the same example ids.
pub fn marker_analysis(
    examples: &[ProbeExample],
    preds_a: &BTreeMap<u64, usize>,
    preds_b: &BTreeMap<u64, usize>,
    stats: &CorpusStats,
) -> Result<MarkerTable> {
    for (name, preds) in [("A", preds_a), ("B", preds_b)] {
        for ex in examples {
            if !preds.contains_key(&ex.id) {
                return Err(Error::PredictionIdMismatch(format!(
                    "prediction file {name} is missing example id {}",
                    ex.id
                )));
            }
        }
        if preds.len() != examples.len() {
            return Err(Error::PredictionIdMismatch(format!(
                "prediction file {name} covers {} ids but the probe set has {} examples",
                preds.len(),
                examples.len()
            )));
        }
    }

    let ids = marker_ids(stats);
    let train_counts: Vec<u64> = DISCOURSE_MARKERS
        .iter()
        .map(|m| stats.count_for(m))
        .collect();
    let train_total = stats.total_tokens();

    let mut set_a: Vec<&ProbeExample> = Vec::new();
    let mut set_b: Vec<&ProbeExample> = Vec::new();
    for ex in examples {
        let a_ok = preds_a[&ex.id] == ex.label;
        let b_ok = preds_b[&ex.id] == ex.label;
        match (a_ok, b_ok) {
            (true, false) => set_a.push(ex),
            (false, true) => set_b.push(ex),
            _ => {}
        }
    }
    let no_disagreements = set_a.is_empty() && set_b.is_empty();
    Ok(MarkerTable {
        markers: DISCOURSE_MARKERS.iter().map(|m| m.to_string()).collect(),
        train_counts,
        a_correct_b_wrong: set_report(&set_a, &ids, &train_counts_ref(stats), train_total),
        b_correct_a_wrong: set_report(&set_b, &ids, &train_counts_ref(stats), train_total),
        no_disagreements,
    })
}

fn train_counts_ref(stats: &CorpusStats) -> Vec<u64> {
    DISCOURSE_MARKERS
        .iter()
        .map(|m| stats.count_for(m))
        .collect()
}
