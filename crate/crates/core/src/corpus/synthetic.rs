//! Structured synthetic corpus generator.
//!
//! Every paragraph carries a topic token; sentence j is
//! `[topic, ordinal_j, connective?, fillers...]` where the ordinals walk a
//! fixed 32-token cyclic chain from a random per-paragraph offset. Sentence
//! order and pairwise distance are therefore recoverable from content alone,
//! which is what makes desk-scale training and probing measurable.

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Discourse markers used both as synthetic connectives and by the marker
/// frequency analysis.
pub const DISCOURSE_MARKERS: [&str; 13] = [
    "but", "when", "if", "before", "because", "while", "though", "after", "so", "although",
    "then", "also", "still",
];

pub const NUM_TOPICS: usize = 64;
pub const ORDINAL_CHAIN_LEN: usize = 32;
pub const NUM_FILLERS: usize = 2000;
const CONNECTIVE_PROB: f64 = 0.3;
const ZIPF_EXPONENT: f64 = 1.1;

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub num_docs: usize,
    pub paragraphs_per_doc: usize,
    /// Inclusive sentence-count range per paragraph; must lie within [6, 20].
    pub sentences_min: usize,
    pub sentences_max: usize,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sentences_min < 6
            || self.sentences_max > 20
            || self.sentences_min > self.sentences_max
        {
            return Err(Error::InvalidConfig(format!(
                "sentences per paragraph must be a non-empty range within [6, 20], got {}..={}",
                self.sentences_min, self.sentences_max
            )));
        }
        if self.num_docs == 0 || self.paragraphs_per_doc == 0 {
            return Err(Error::InvalidConfig(
                "num_docs and paragraphs_per_doc must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn topic_token(i: usize) -> String {
    format!("topic{i:02}")
}

fn ordinal_token(i: usize) -> String {
    format!("ord{i:02}")
}

fn filler_token(i: usize) -> String {
    format!("fill{i:04}")
}

/// Position of a token in the ordinal chain, if it is an ordinal.
pub fn ordinal_chain_index(token: &str) -> Option<usize> {
    let rest = token.strip_prefix("ord")?;
    let idx: usize = rest.parse().ok()?;
    (idx < ORDINAL_CHAIN_LEN && token == ordinal_token(idx)).then_some(idx)
}

/// Generates document texts: paragraphs separated by blank lines, sentences
/// terminated with periods. Byte-identical for identical configs.
pub fn generate_synthetic_corpus(cfg: &SyntheticConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = Zipf::new(NUM_FILLERS as f64, ZIPF_EXPONENT)
        .map_err(|e| Error::InvalidConfig(format!("zipf: {e}")))?;
    let mut docs = Vec::with_capacity(cfg.num_docs);
    for _ in 0..cfg.num_docs {
        let mut paragraphs = Vec::with_capacity(cfg.paragraphs_per_doc);
        for _ in 0..cfg.paragraphs_per_doc {
            let topic = topic_token(rng.random_range(0..NUM_TOPICS));
            let offset = rng.random_range(0..ORDINAL_CHAIN_LEN);
            let n_sentences = rng.random_range(cfg.sentences_min..=cfg.sentences_max);
            let mut sentences = Vec::with_capacity(n_sentences);
            for j in 0..n_sentences {
                let mut words = vec![
                    topic.clone(),
                    ordinal_token((offset + j) % ORDINAL_CHAIN_LEN),
                ];
                if rng.random::<f64>() < CONNECTIVE_PROB {
                    words.push(
                        DISCOURSE_MARKERS[rng.random_range(0..DISCOURSE_MARKERS.len())]
                            .to_string(),
                    );
                }
                let n_fillers = rng.random_range(4..=8usize);
                for _ in 0..n_fillers {
                    let v = zipf.sample(&mut rng) as usize;
                    words.push(filler_token(v - 1));
                }
                sentences.push(format!("{}.", words.join(" ")));
            }
            paragraphs.push(sentences.join(" "));
        }
        docs.push(paragraphs.join("\n\n"));
    }
    Ok(docs)
}

/// Recovers each sentence's position relative to the paragraph's first
/// sentence by decoding ordinal tokens. Errors if a sentence has no ordinal.
pub fn recover_sentence_offsets(
    paragraph: &[Vec<u32>],
    vocab: &Vocabulary,
) -> Result<Vec<usize>> {
    let mut chain_indices = Vec::with_capacity(paragraph.len());
    for (si, sentence) in paragraph.iter().enumerate() {
        let idx = sentence
            .iter()
            .filter_map(|&id| vocab.token(id).and_then(ordinal_chain_index))
            .next()
            .ok_or_else(|| {
                Error::EmptyInput(format!("sentence {si} carries no ordinal token"))
            })?;
        chain_indices.push(idx);
    }
    let base = chain_indices[0];
    Ok(chain_indices
        .into_iter()
        .map(|i| (i + ORDINAL_CHAIN_LEN - base) % ORDINAL_CHAIN_LEN)
        .collect())
}
