//! Frequency-ordered vocabulary with fixed special ids.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::segment::tokenize_words;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIALS: usize = 5;
const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Token <-> id bijection over non-special tokens; ids are dense 0..size-1
/// with the five specials pinned at 0..=4.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds from raw text: tokens counted over the whole corpus, the most
    /// frequent kept up to max_size-5, ties broken lexicographically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        if max_size < NUM_SPECIALS + 1 {
            return Err(Error::InvalidConfig(format!(
                "vocabulary max_size must be at least {}, got {max_size}",
                NUM_SPECIALS + 1
            )));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for token in tokenize_words(text) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - NUM_SPECIALS);
        Ok(Self::from_ranked_tokens(
            ranked.into_iter().map(|(t, _)| t),
        ))
    }

    /// Assembles a vocabulary from tokens already in rank order.
    pub fn from_ranked_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .skip(NUM_SPECIALS)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            id_to_token,
            token_to_id,
        }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    /// All tokens in id order, specials first.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Tokenizes and encodes one sentence; out-of-vocabulary tokens become
    /// UNK, specials are never produced.
    pub fn encode_sentence(&self, sentence: &str) -> Vec<u32> {
        tokenize_words(sentence)
            .iter()
            .map(|t| self.token_id(t).unwrap_or(UNK))
            .collect()
    }

    /// Keeps the first `size` entries; valid because ids are rank-ordered.
    pub fn truncated(&self, size: usize) -> Result<Self> {
        if size < NUM_SPECIALS + 1 {
            return Err(Error::InvalidConfig(format!(
                "vocabulary size must be at least {}, got {size}",
                NUM_SPECIALS + 1
            )));
        }
        let keep = size.min(self.id_to_token.len());
        Ok(Self::from_ranked_tokens(
            self.id_to_token[NUM_SPECIALS..keep].iter().cloned(),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabFile {
            tokens: self.id_to_token.clone(),
        };
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(&mut f, &file)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: VocabFile = serde_json::from_slice(&bytes)?;
        if file.tokens.len() < NUM_SPECIALS
            || file.tokens[..NUM_SPECIALS]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                msg: "vocabulary file does not start with the five special tokens".into(),
            });
        }
        Ok(Self::from_ranked_tokens(
            file.tokens[NUM_SPECIALS..].iter().cloned(),
        ))
    }
}
