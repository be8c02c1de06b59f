//! Frozen-encoder probing: synthetic sentence-position, binary sentence
//! ordering and discourse-coherence tasks, a deterministic logistic
//! regression probe, and discourse-marker frequency analysis.

pub mod logreg;
pub mod markers;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use logreg::{train_probe, ProbeTaskReport};
pub use markers::{marker_analysis, MarkerTable};

use crate::corpus::Corpus;
use crate::encoder::{encode, EncoderParams};
use crate::error::{Error, Result};
use crate::numcore::Tape;
use crate::sampler::{pack_pair, pack_single};
use crate::seeding::{derive_stream_seed, unit_fraction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub enum ProbeTask {
    #[serde(rename = "SP")]
    Sp,
    #[serde(rename = "BSO")]
    Bso,
    #[serde(rename = "DC")]
    Dc,
}

impl ProbeTask {
    pub fn sentence_count(self) -> usize {
        match self {
            ProbeTask::Sp => 5,
            ProbeTask::Bso => 2,
            ProbeTask::Dc => 6,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            ProbeTask::Sp => 5,
            ProbeTask::Bso | ProbeTask::Dc => 2,
        }
    }

    pub fn all() -> [ProbeTask; 3] {
        [ProbeTask::Sp, ProbeTask::Bso, ProbeTask::Dc]
    }
}

impl std::fmt::Display for ProbeTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProbeTask::Sp => write!(f, "SP"),
            ProbeTask::Bso => write!(f, "BSO"),
            ProbeTask::Dc => write!(f, "DC"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One probe example. SP: five sentences with the one moved to the front
/// labeled by its original position; BSO: a sentence pair labeled
/// ordered(0)/reversed(1); DC: six sentences labeled coherent(0)/
/// corrupted(1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeExample {
    pub task: ProbeTask,
    pub id: u64,
    pub sentences: Vec<Vec<u32>>,
    pub label: usize,
    pub split: Split,
}

/// Builds all three probe datasets from a corpus. Windows are
/// non-overlapping within each paragraph; the train/test split is decided
/// per paragraph from the seed, so the two sides never share a paragraph.
pub fn build_probes(corpus: &Corpus, seed: u64) -> Result<BTreeMap<ProbeTask, Vec<ProbeExample>>> {
    let mut out: BTreeMap<ProbeTask, Vec<ProbeExample>> = BTreeMap::new();
    // sentence pool for DC corruption: (doc index, paragraph, sentence)
    let all_sentences: Vec<(usize, usize, usize)> = corpus
        .documents
        .iter()
        .enumerate()
        .flat_map(|(di, d)| {
            d.paragraphs.iter().enumerate().flat_map(move |(pi, p)| {
                (0..p.len()).map(move |si| (di, pi, si))
            })
        })
        .collect();

    for task in ProbeTask::all() {
        let need = task.sentence_count();
        let mut examples = Vec::new();
        let mut qualifying = 0usize;
        for (di, doc) in corpus.documents.iter().enumerate() {
            for (pi, para) in doc.paragraphs.iter().enumerate() {
                if para.len() < need {
                    continue;
                }
                qualifying += 1;
                let split = if unit_fraction(derive_stream_seed(&[
                    seed,
                    0x73_70_6c_69_74,
                    doc.doc_id,
                    pi as u64,
                ])) < 0.8
                {
                    Split::Train
                } else {
                    Split::Test
                };
                let mut rng = ChaCha8Rng::seed_from_u64(derive_stream_seed(&[
                    seed,
                    task as u64,
                    doc.doc_id,
                    pi as u64,
                ]));
                let mut start = 0usize;
                while start + need <= para.len() {
                    let window: Vec<Vec<u32>> =
                        para[start..start + need].to_vec();
                    let (sentences, label) = match task {
                        ProbeTask::Sp => {
                            let p = rng.random_range(0..5usize);
                            let mut arranged = Vec::with_capacity(5);
                            arranged.push(window[p].clone());
                            for (i, s) in window.iter().enumerate() {
                                if i != p {
                                    arranged.push(s.clone());
                                }
                            }
                            (arranged, p)
                        }
                        ProbeTask::Bso => {
                            if rng.random::<f64>() < 0.5 {
                                (vec![window[1].clone(), window[0].clone()], 1)
                            } else {
                                (window, 0)
                            }
                        }
                        ProbeTask::Dc => {
                            if rng.random::<f64>() < 0.5 {
                                let mut corrupted = window;
                                let pos = rng.random_range(1..=4usize);
                                // replacement from a different document
                                let replacement = loop {
                                    let (rdi, rpi, rsi) =
                                        all_sentences[rng.random_range(0..all_sentences.len())];
                                    if rdi != di {
                                        break corpus.paragraph(rdi, rpi)[rsi].clone();
                                    }
                                };
                                corrupted[pos] = replacement;
                                (corrupted, 1)
                            } else {
                                (window, 0)
                            }
                        }
                    };
                    examples.push(ProbeExample {
                        task,
                        id: examples.len() as u64,
                        sentences,
                        label,
                        split,
                    });
                    start += need;
                }
            }
        }
        let train = examples.iter().filter(|e| e.split == Split::Train).count();
        let test = examples.len() - train;
        if qualifying < 5 || train == 0 || test == 0 {
            return Err(Error::Probe(format!(
                "{task} needs paragraphs with at least {need} sentences: found {qualifying} qualifying paragraphs giving {train} train / {test} test examples; need at least 5 paragraphs and 1 example per split"
            )));
        }
        out.insert(task, examples);
    }
    Ok(out)
}

/// Pooled-vector features for one example under frozen parameters: SP is
/// [c(s1), t(s1,s2..s5)] (5H), BSO is t(s1,s2) (H), DC concatenates the
/// three consecutive-pair encodings (3H). No masking, no dropout.
pub fn featurize(
    example: &ProbeExample,
    params: &EncoderParams<f32>,
    max_seq: usize,
) -> Result<Vec<f32>> {
    let mut tape = Tape::new();
    let vars = params.mount(&mut tape, false);
    let pooled_single = |tape: &mut Tape<f32>, s: &[u32]| -> Result<Vec<f32>> {
        let p = pack_single(s, max_seq);
        let (_, pooled) = encode(tape, &vars, &p.ids, &p.segment_ids, &p.attention_mask, None)?;
        Ok(tape.value(pooled).data().to_vec())
    };
    let pooled_pair = |tape: &mut Tape<f32>, a: &[u32], b: &[u32]| -> Result<Vec<f32>> {
        let p = pack_pair(a, b, max_seq);
        let (_, pooled) = encode(tape, &vars, &p.ids, &p.segment_ids, &p.attention_mask, None)?;
        Ok(tape.value(pooled).data().to_vec())
    };
    let s = &example.sentences;
    let mut features = Vec::new();
    match example.task {
        ProbeTask::Sp => {
            features.extend(pooled_single(&mut tape, &s[0])?);
            for other in &s[1..5] {
                features.extend(pooled_pair(&mut tape, &s[0], other)?);
            }
        }
        ProbeTask::Bso => {
            features.extend(pooled_pair(&mut tape, &s[0], &s[1])?);
        }
        ProbeTask::Dc => {
            for pair in s.chunks_exact(2) {
                features.extend(pooled_pair(&mut tape, &pair[0], &pair[1])?);
            }
        }
    }
    Ok(features)
}

/// Featurizes a whole dataset in parallel; output order matches input order.
pub fn featurize_all(
    examples: &[ProbeExample],
    params: &EncoderParams<f32>,
    max_seq: usize,
) -> Result<Vec<Vec<f32>>> {
    examples
        .par_iter()
        .map(|e| featurize(e, params, max_seq))
        .collect()
}

/// Full probe report across tasks for one checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub checkpoint: String,
    pub tasks: BTreeMap<String, ProbeTaskReport>,
}

// ---- probe dataset JSONL -----------------------------------------------

pub fn write_probe_jsonl(examples: &[ProbeExample], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_probe_jsonl(path: &Path) -> Result<Vec<ProbeExample>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                msg: format!("line {}: {e}", lineno + 1),
            })?,
        );
    }
    Ok(out)
}
