//! Corpus ingestion: raw text to documents of paragraphs of token-id
//! sentences, plus corpus statistics and the synthetic generator.

pub mod segment;
pub mod synthetic;
pub mod vocab;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use segment::{segment_sentences, tokenize_words};
pub use synthetic::{generate_synthetic_corpus, SyntheticConfig, DISCOURSE_MARKERS};
pub use vocab::{Vocabulary, CLS, MASK, NUM_SPECIALS, PAD, SEP, UNK};

use crate::error::{Error, Result};

pub type Sentence = Vec<u32>;
pub type ParagraphTokens = Vec<Sentence>;

/// One source document: ordered paragraphs of ordered, non-empty token-id
/// sentences, with a stable id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: u64,
    pub paragraphs: Vec<ParagraphTokens>,
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn num_paragraphs(&self) -> usize {
        self.documents.iter().map(|d| d.paragraphs.len()).sum()
    }

    pub fn paragraph(&self, doc_idx: usize, para_idx: usize) -> &ParagraphTokens {
        &self.documents[doc_idx].paragraphs[para_idx]
    }

    /// Remaps token ids at or beyond `vocab_size` to UNK; used when a corpus
    /// was encoded with a larger vocabulary than the model's.
    pub fn clamp_to_vocab(&mut self, vocab_size: usize) {
        let limit = vocab_size as u32;
        for doc in &mut self.documents {
            for para in &mut doc.paragraphs {
                for sentence in para {
                    for id in sentence {
                        if *id >= limit {
                            *id = UNK;
                        }
                    }
                }
            }
        }
    }
}

/// Splits raw text into document blocks on lines containing exactly `===`;
/// paragraphs split on blank lines, with a paragraph's lines joined by a
/// single space.
fn split_blocks(text: &str) -> Vec<Vec<String>> {
    let mut blocks = Vec::new();
    for block in text.split("\n===\n") {
        let mut paragraphs = Vec::new();
        let mut current: Vec<&str> = Vec::new();
        for line in block.lines() {
            if line.trim() == "===" {
                continue;
            }
            if line.trim().is_empty() {
                if !current.is_empty() {
                    paragraphs.push(current.join(" "));
                    current.clear();
                }
            } else {
                current.push(line.trim());
            }
        }
        if !current.is_empty() {
            paragraphs.push(current.join(" "));
        }
        if !paragraphs.is_empty() {
            blocks.push(paragraphs);
        }
    }
    blocks
}

/// Tokenizes raw text into documents. Documents are processed in parallel
/// and merged in source order, so the result is independent of scheduling.
/// Empty sentences are dropped; blocks with no content produce no document.
pub fn ingest_text(text: &str, vocab: &Vocabulary, doc_id_offset: u64) -> Corpus {
    let blocks = split_blocks(text);
    let documents: Vec<Document> = blocks
        .par_iter()
        .enumerate()
        .map(|(i, paragraphs)| {
            let paragraphs: Vec<ParagraphTokens> = paragraphs
                .iter()
                .map(|p| {
                    segment_sentences(p)
                        .iter()
                        .map(|s| vocab.encode_sentence(s))
                        .filter(|ids| !ids.is_empty())
                        .collect::<ParagraphTokens>()
                })
                .filter(|p: &ParagraphTokens| !p.is_empty())
                .collect();
            Document {
                doc_id: doc_id_offset + i as u64,
                paragraphs,
            }
        })
        .collect();
    Corpus { documents }
}

/// Collects every paragraph of raw text for vocabulary building.
pub fn raw_paragraphs(text: &str) -> Vec<String> {
    split_blocks(text).into_iter().flatten().collect()
}

// ---- corpus JSONL ----------------------------------------------------------

pub fn write_corpus_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for doc in &corpus.documents {
        serde_json::to_writer(&mut w, doc)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_corpus_jsonl(path: &Path) -> Result<Corpus> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(f);
    let mut documents = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", lineno + 1),
        })?;
        documents.push(doc);
    }
    Ok(Corpus { documents })
}

// ---- corpus statistics ------------------------------------------------------

/// Exact counts over an ingested corpus; token counts are indexed by
/// vocabulary id and the token strings ride along so downstream analysis
/// needs no separate vocabulary file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    /// (paragraph length in sentences, number of paragraphs) pairs, sorted.
    pub paragraph_length_histogram: Vec<(usize, u64)>,
    pub tokens: Vec<String>,
    pub token_counts: Vec<u64>,
}

impl CorpusStats {
    pub fn compute(corpus: &Corpus, vocab: &Vocabulary) -> Self {
        let mut histogram: BTreeMap<usize, u64> = BTreeMap::new();
        let mut counts = vec![0u64; vocab.size()];
        for doc in &corpus.documents {
            for para in &doc.paragraphs {
                *histogram.entry(para.len()).or_insert(0) += 1;
                for sentence in para {
                    for &id in sentence {
                        if (id as usize) < counts.len() {
                            counts[id as usize] += 1;
                        }
                    }
                }
            }
        }
        CorpusStats {
            documents: corpus.documents.len(),
            paragraph_length_histogram: histogram.into_iter().collect(),
            tokens: vocab.tokens().to_vec(),
            token_counts: counts,
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.token_counts.iter().sum()
    }

    pub fn count_for(&self, token: &str) -> u64 {
        self.tokens
            .iter()
            .position(|t| t == token)
            .map(|i| self.token_counts[i])
            .unwrap_or(0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "First sentence here. Second one!\n\nNext paragraph text.\n===\nOther document. It has words.\n";

    #[test]
    fn ingestion_is_deterministic_and_order_preserving() {
        let vocab = Vocabulary::build([SAMPLE], 64).unwrap();
        let a = ingest_text(SAMPLE, &vocab, 0);
        let b = ingest_text(SAMPLE, &vocab, 0);
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.documents.len(), 2);
        assert_eq!(a.documents[0].doc_id, 0);
        assert_eq!(a.documents[1].doc_id, 1);
        assert_eq!(a.documents[0].paragraphs.len(), 2);
        assert_eq!(a.documents[0].paragraphs[0].len(), 2);
    }

    #[test]
    fn every_token_id_decodes_through_the_vocabulary() {
        let vocab = Vocabulary::build([SAMPLE], 10).unwrap();
        let corpus = ingest_text(SAMPLE, &vocab, 0);
        for doc in &corpus.documents {
            for para in &doc.paragraphs {
                for sentence in para {
                    assert!(!sentence.is_empty());
                    for &id in sentence {
                        assert!(vocab.token(id).is_some(), "id {id} must decode");
                    }
                }
            }
        }
    }

    #[test]
    fn doc_id_offset_shifts_ids() {
        let vocab = Vocabulary::build([SAMPLE], 64).unwrap();
        let corpus = ingest_text(SAMPLE, &vocab, 100);
        assert_eq!(corpus.documents[0].doc_id, 100);
        assert_eq!(corpus.documents[1].doc_id, 101);
    }

    #[test]
    fn corpus_jsonl_round_trip() {
        let vocab = Vocabulary::build([SAMPLE], 64).unwrap();
        let corpus = ingest_text(SAMPLE, &vocab, 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus_jsonl(&corpus, &path).unwrap();
        let loaded = read_corpus_jsonl(&path).unwrap();
        assert_eq!(corpus.documents, loaded.documents);
    }

    #[test]
    fn stats_count_exactly() {
        let text = "a a b.\n===\na c c c.\n";
        let vocab = Vocabulary::build([text], 16).unwrap();
        let corpus = ingest_text(text, &vocab, 0);
        let stats = CorpusStats::compute(&corpus, &vocab);
        assert_eq!(stats.documents, 2);
        assert_eq!(stats.count_for("a"), 3);
        assert_eq!(stats.count_for("b"), 1);
        assert_eq!(stats.count_for("c"), 3);
        assert_eq!(stats.paragraph_length_histogram, vec![(1, 2)]);
    }

    #[test]
    fn clamping_maps_high_ids_to_unk() {
        let text = "common common rare.";
        let vocab = Vocabulary::build([text], 16).unwrap();
        let mut corpus = ingest_text(text, &vocab, 0);
        corpus.clamp_to_vocab(6); // keeps only "common"
        assert_eq!(corpus.documents[0].paragraphs[0][0], vec![5, 5, UNK]);
    }
}
