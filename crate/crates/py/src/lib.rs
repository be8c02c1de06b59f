//! Python bindings over the core types and operations: segmentation,
//! vocabulary, synthetic corpus generation, target placement, masking,
//! packing, the encoder with its contrastive loss, training and probing.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use conpono_core::corpus;
use conpono_core::encoder::{self, checkpoint, EncoderParams};
use conpono_core::evalprobe::{self, logreg::ProbeData, ProbeTask, Split};
use conpono_core::numcore::Tape;
use conpono_core::objective::BatchItem;
use conpono_core::sampler::{self, Candidate, Provenance, SpanRef, SpanTokens, TrainingInstance};
use conpono_core::trainer::{self, flat::FlatTrainConfig};

fn to_py_err(e: conpono_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
fn segment_sentences(text: &str) -> Vec<String> {
    corpus::segment_sentences(text)
}

#[pyfunction]
fn tokenize_words(text: &str) -> Vec<String> {
    corpus::tokenize_words(text)
}

#[pyfunction]
#[pyo3(signature = (seed, num_docs, paragraphs_per_doc, sentences_min=8, sentences_max=16))]
fn generate_synthetic_corpus(
    seed: u64,
    num_docs: usize,
    paragraphs_per_doc: usize,
    sentences_min: usize,
    sentences_max: usize,
) -> PyResult<Vec<String>> {
    corpus::generate_synthetic_corpus(&corpus::SyntheticConfig {
        seed,
        num_docs,
        paragraphs_per_doc,
        sentences_min,
        sentences_max,
    })
    .map_err(to_py_err)
}

#[pyclass(name = "Vocabulary")]
struct PyVocabulary {
    inner: corpus::Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    #[staticmethod]
    fn build(texts: Vec<String>, max_size: usize) -> PyResult<Self> {
        let inner = corpus::Vocabulary::build(texts.iter().map(|s| s.as_str()), max_size)
            .map_err(to_py_err)?;
        Ok(PyVocabulary { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyVocabulary {
            inner: corpus::Vocabulary::load(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py_err)
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.size()
    }

    fn encode_sentence(&self, sentence: &str) -> Vec<u32> {
        self.inner.encode_sentence(sentence)
    }

    fn token(&self, id: u32) -> Option<String> {
        self.inner.token(id).map(|s| s.to_string())
    }

    fn token_id(&self, token: &str) -> Option<u32> {
        self.inner.token_id(token)
    }
}

#[pyfunction]
#[pyo3(signature = (anchor_start, anchor_end, k, paragraph_len, target_len=3, k_max=4))]
fn place_target(
    anchor_start: usize,
    anchor_end: usize,
    k: i32,
    paragraph_len: usize,
    target_len: usize,
    k_max: usize,
) -> PyResult<(usize, usize)> {
    let cfg = sampler::WindowConfig {
        k_max,
        target_len,
        ..sampler::WindowConfig::default()
    };
    let anchor = SpanRef {
        doc_id: 0,
        paragraph: 0,
        start: anchor_start,
        end: anchor_end,
    };
    let span = sampler::place_target(&anchor, k, &cfg, paragraph_len).map_err(to_py_err)?;
    Ok((span.start, span.end))
}

#[pyfunction]
#[pyo3(signature = (paragraph_len, anchor_start, anchor_end, target_len=3, k_max=4))]
fn enumerate_feasible_k(
    paragraph_len: usize,
    anchor_start: usize,
    anchor_end: usize,
    target_len: usize,
    k_max: usize,
) -> Vec<i32> {
    let cfg = sampler::WindowConfig {
        k_max,
        target_len,
        ..sampler::WindowConfig::default()
    };
    let anchor = SpanRef {
        doc_id: 0,
        paragraph: 0,
        start: anchor_start,
        end: anchor_end,
    };
    sampler::enumerate_feasible_k(paragraph_len, &anchor, &cfg)
}

#[pyfunction]
fn apply_masking(
    token_ids: Vec<u32>,
    mask_rate: f64,
    vocab_size: usize,
    seed: u64,
) -> (Vec<u32>, Vec<(usize, String, u32)>) {
    let (masked, plan) = sampler::apply_masking(&token_ids, mask_rate, vocab_size, seed);
    let plan = plan
        .iter()
        .map(|e| {
            let action = match e.action() {
                sampler::MaskAction::Mask => "mask",
                sampler::MaskAction::Random => "random",
                sampler::MaskAction::Keep => "keep",
            };
            (e.position(), action.to_string(), e.original())
        })
        .collect();
    (masked, plan)
}

fn widen(v: Vec<u8>) -> Vec<u32> {
    v.into_iter().map(u32::from).collect()
}

#[pyfunction]
fn pack_pair(
    anchor: Vec<u32>,
    target: Vec<u32>,
    max_seq: usize,
) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
    let p = sampler::pack_pair(&anchor, &target, max_seq);
    (p.ids, widen(p.segment_ids), widen(p.attention_mask))
}

#[pyfunction]
fn pack_single(span: Vec<u32>, max_seq: usize) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
    let p = sampler::pack_single(&span, max_seq);
    (p.ids, widen(p.segment_ids), widen(p.attention_mask))
}

/// A frozen or freshly initialized encoder addressed from Python.
#[pyclass(name = "Encoder")]
struct PyEncoder {
    params: EncoderParams<f32>,
}

#[pymethods]
impl PyEncoder {
    /// config_json is the flat training-config document; encoder fields are
    /// read from it (vocab_size is required).
    #[new]
    fn new(config_json: &str, seed: u64) -> PyResult<Self> {
        let flat = FlatTrainConfig::from_json(config_json).map_err(to_py_err)?;
        let config = flat.resolve(None).map_err(to_py_err)?;
        let params = EncoderParams::init(&config.encoder, seed).map_err(to_py_err)?;
        Ok(PyEncoder { params })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (params, _, _) = checkpoint::load(&path).map_err(to_py_err)?;
        Ok(PyEncoder { params })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.params, 0, 0, &path).map_err(to_py_err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.params.config.hidden
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.params.config)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Pooled vector for a packed input.
    fn encode(
        &self,
        input_ids: Vec<u32>,
        segment_ids: Vec<u32>,
        attention_mask: Vec<u32>,
    ) -> PyResult<Vec<f32>> {
        let segs: Vec<u8> = segment_ids.iter().map(|&v| v as u8).collect();
        let mask: Vec<u8> = attention_mask.iter().map(|&v| v as u8).collect();
        let mut tape = Tape::new();
        let vars = self.params.mount(&mut tape, false);
        let (_, pooled) =
            encoder::encode(&mut tape, &vars, &input_ids, &segs, &mask, None)
                .map_err(to_py_err)?;
        Ok(tape.value(pooled).data().to_vec())
    }

    /// (c, t) pooled vectors for an anchor/candidate pair under the
    /// configured coupling; c is None for the uni coupling.
    #[pyo3(signature = (anchor_ids, candidate_ids, max_seq=128))]
    fn represent(
        &self,
        anchor_ids: Vec<u32>,
        candidate_ids: Vec<u32>,
        max_seq: usize,
    ) -> PyResult<(Option<Vec<f32>>, Vec<f32>)> {
        let window = sampler::WindowConfig {
            max_seq,
            ..sampler::WindowConfig::default()
        };
        let mut tape = Tape::new();
        let vars = self.params.mount(&mut tape, false);
        let (c, t) = encoder::represent(
            &mut tape,
            &vars,
            &window,
            &anchor_ids,
            &candidate_ids,
            None,
        )
        .map_err(to_py_err)?;
        Ok((
            c.map(|v| tape.value(v).data().to_vec()),
            tape.value(t).data().to_vec(),
        ))
    }

    /// Contrastive loss of one candidate set (no masking, no dropout).
    #[pyo3(signature = (anchor_ids, candidates, k, true_index, max_seq=128))]
    fn contrastive_loss(
        &self,
        anchor_ids: Vec<u32>,
        candidates: Vec<Vec<u32>>,
        k: i32,
        true_index: usize,
        max_seq: usize,
    ) -> PyResult<f64> {
        if true_index >= candidates.len() {
            return Err(PyValueError::new_err("true_index out of range"));
        }
        let window = sampler::WindowConfig {
            max_seq,
            ..sampler::WindowConfig::default()
        };
        let n = candidates.len();
        let instance = TrainingInstance {
            anchor: SpanTokens {
                span: SpanRef {
                    doc_id: 0,
                    paragraph: 0,
                    start: 0,
                    end: 0,
                },
                token_ids: anchor_ids,
            },
            k,
            candidates: candidates
                .into_iter()
                .enumerate()
                .map(|(i, token_ids)| Candidate {
                    token_ids,
                    provenance: if i == true_index {
                        Provenance::TrueTarget
                    } else {
                        Provenance::Random
                    },
                    origin: SpanRef {
                        doc_id: 1,
                        paragraph: 0,
                        start: 0,
                        end: 0,
                    },
                })
                .collect(),
            true_index,
            mask_plan: vec![Vec::new(); n + 1],
        };
        let mut tape = Tape::new();
        let vars = self.params.mount(&mut tape, false);
        let (_, breakdown) = conpono_core::objective::total_loss(
            &mut tape,
            &vars,
            &window,
            &[BatchItem::Conpono(&instance)],
            0.0,
            None,
        )
        .map_err(to_py_err)?;
        Ok(breakdown.total)
    }
}

/// Trains from shards on disk; returns the final heldout record as JSON.
#[pyfunction]
fn train(config_json: &str, shards_dir: PathBuf, out_dir: PathBuf) -> PyResult<String> {
    let (shard_config, data) = sampler::read_shards(&shards_dir).map_err(to_py_err)?;
    let flat = FlatTrainConfig::from_json(config_json).map_err(to_py_err)?;
    let config = flat.resolve(Some(&shard_config)).map_err(to_py_err)?;
    let outcome = trainer::train(&config, &shard_config, &data, Some(&out_dir)).map_err(to_py_err)?;
    let last = outcome.run_log.steps.last().unwrap();
    let summary = serde_json::json!({
        "steps": outcome.run_log.steps.len(),
        "final_loss_total": last.loss_total,
        "heldout": outcome.final_heldout.map(|h| serde_json::json!({
            "overall": h.overall,
            "num_instances": h.num_instances,
            "chance": h.chance,
        })),
    });
    Ok(summary.to_string())
}

/// Builds probe datasets from a corpus file, featurizes them under a
/// checkpoint, trains the probes and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (checkpoint_path, corpus_path, tasks="sp,bso,dc", seed=1))]
fn probe_report(
    checkpoint_path: PathBuf,
    corpus_path: PathBuf,
    tasks: &str,
    seed: u64,
) -> PyResult<String> {
    let (params, _, _) = checkpoint::load(&checkpoint_path).map_err(to_py_err)?;
    let mut corpus = corpus::read_corpus_jsonl(&corpus_path).map_err(to_py_err)?;
    corpus.clamp_to_vocab(params.config.vocab_size);
    let probes = evalprobe::build_probes(&corpus, seed).map_err(to_py_err)?;
    let mut out = BTreeMap::new();
    for part in tasks.split(',') {
        let task = match part.trim().to_lowercase().as_str() {
            "sp" => ProbeTask::Sp,
            "bso" => ProbeTask::Bso,
            "dc" => ProbeTask::Dc,
            other => return Err(PyValueError::new_err(format!("unknown task {other:?}"))),
        };
        let examples = &probes[&task];
        let features = evalprobe::featurize_all(examples, &params, params.config.max_positions)
            .map_err(to_py_err)?;
        let (mut train_f, mut train_l) = (Vec::new(), Vec::new());
        let (mut test_f, mut test_l, mut test_ids) = (Vec::new(), Vec::new(), Vec::new());
        for (ex, f) in examples.iter().zip(features) {
            match ex.split {
                Split::Train => {
                    train_f.push(f);
                    train_l.push(ex.label);
                }
                Split::Test => {
                    test_f.push(f);
                    test_l.push(ex.label);
                    test_ids.push(ex.id);
                }
            }
        }
        let report = evalprobe::train_probe(
            &task.to_string(),
            task.num_classes(),
            &ProbeData {
                train_features: &train_f,
                train_labels: &train_l,
                test_features: &test_f,
                test_labels: &test_l,
                test_ids: &test_ids,
            },
        )
        .map_err(to_py_err)?;
        out.insert(task.to_string(), report);
    }
    serde_json::to_string(&out).map_err(|e| PyIOError::new_err(e.to_string()))
}

/// Generates conpono/nsp/bso shards from a corpus file.
#[pyfunction]
#[pyo3(signature = (corpus_path, vocab_path, out_dir, mode="conpono", seed=1, window_json=None))]
fn generate_shards(
    corpus_path: PathBuf,
    vocab_path: PathBuf,
    out_dir: PathBuf,
    mode: &str,
    seed: u64,
    window_json: Option<&str>,
) -> PyResult<usize> {
    let mode = trainer::flat::parse_shard_mode(mode).map_err(to_py_err)?;
    let vocab = corpus::Vocabulary::load(&vocab_path).map_err(to_py_err)?;
    let mut corpus = corpus::read_corpus_jsonl(&corpus_path).map_err(to_py_err)?;
    corpus.clamp_to_vocab(vocab.size());
    let window: sampler::WindowConfig = match window_json {
        Some(json) => serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => sampler::WindowConfig::default(),
    };
    let data = sampler::generate_shards(&corpus, &window, mode, seed, vocab.size())
        .map_err(to_py_err)?;
    sampler::write_shards(&out_dir, &data, &window, mode, seed, vocab.size())
        .map_err(to_py_err)?;
    Ok(data.len())
}

/// Ingests raw text documents (or writes a synthetic corpus) to JSONL,
/// producing the full-vocabulary and stats sidecars like the CLI does.
#[pyfunction]
#[pyo3(signature = (text, out_path, doc_offset=0))]
fn ingest_text_to_jsonl(text: &str, out_path: PathBuf, doc_offset: u64) -> PyResult<usize> {
    let paragraphs = corpus::raw_paragraphs(text);
    let vocab = corpus::Vocabulary::build(paragraphs.iter().map(|p| p.as_str()), usize::MAX)
        .map_err(to_py_err)?;
    let ingested = corpus::ingest_text(text, &vocab, doc_offset);
    corpus::write_corpus_jsonl(&ingested, &out_path).map_err(to_py_err)?;
    let stem = out_path
        .file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .to_string();
    let sidecar = |tag: &str| -> PathBuf {
        out_path.with_file_name(format!("{stem}.{tag}.json"))
    };
    vocab.save(&sidecar("vocab")).map_err(to_py_err)?;
    corpus::CorpusStats::compute(&ingested, &vocab)
        .save(&sidecar("stats"))
        .map_err(to_py_err)?;
    Ok(ingested.documents.len())
}

#[pymodule]
fn conpono(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(segment_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize_words, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(place_target, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_feasible_k, m)?)?;
    m.add_function(wrap_pyfunction!(apply_masking, m)?)?;
    m.add_function(wrap_pyfunction!(pack_pair, m)?)?;
    m.add_function(wrap_pyfunction!(pack_single, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(probe_report, m)?)?;
    m.add_function(wrap_pyfunction!(generate_shards, m)?)?;
    m.add_function(wrap_pyfunction!(ingest_text_to_jsonl, m)?)?;
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyEncoder>()?;
    Ok(())
}
