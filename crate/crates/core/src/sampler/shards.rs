//! Instance shards on disk: a config sidecar plus JSON Lines instance files.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_instances, build_pair_instances, BaselineMode, EpochSeed, PairInstance, SpanIndex,
    TrainingInstance, WindowConfig,
};
use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShardMode {
    Conpono,
    Nsp,
    Bso,
}

impl std::fmt::Display for ShardMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ShardMode::Conpono => write!(f, "conpono"),
            ShardMode::Nsp => write!(f, "nsp"),
            ShardMode::Bso => write!(f, "bso"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShardConfig {
    pub mode: ShardMode,
    pub window: WindowConfig,
    pub seed: u64,
    pub vocab_size: usize,
    pub num_instances: usize,
}

#[derive(Clone, Debug)]
pub enum ShardData {
    Conpono(Vec<TrainingInstance>),
    Pairs(Vec<PairInstance>),
}

impl ShardData {
    pub fn len(&self) -> usize {
        match self {
            ShardData::Conpono(v) => v.len(),
            ShardData::Pairs(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generates instances for every paragraph. Paragraphs are independent work
/// units with derived stream seeds, so parallel generation is
/// order-independent; results come out sorted by (doc, paragraph, k).
pub fn generate_shards(
    corpus: &Corpus,
    cfg: &WindowConfig,
    mode: ShardMode,
    seed: u64,
    vocab_size: usize,
) -> Result<ShardData> {
    cfg.validate()?;
    let span_index = SpanIndex::build(corpus, cfg.target_len);
    let epoch = EpochSeed::new(seed, 0);
    let locations: Vec<(usize, usize, u64)> = corpus
        .documents
        .iter()
        .enumerate()
        .flat_map(|(di, doc)| {
            (0..doc.paragraphs.len()).map(move |pi| (di, pi, doc.doc_id))
        })
        .collect();
    match mode {
        ShardMode::Conpono => {
            let per_para: Vec<Result<Vec<TrainingInstance>>> = locations
                .par_iter()
                .map(|&(di, pi, doc_id)| {
                    build_instances(
                        corpus,
                        &span_index,
                        di,
                        pi,
                        cfg,
                        vocab_size,
                        epoch.stream_for(doc_id, pi),
                    )
                })
                .collect();
            let mut out = Vec::new();
            for r in per_para {
                out.extend(r?);
            }
            Ok(ShardData::Conpono(out))
        }
        ShardMode::Nsp | ShardMode::Bso => {
            let baseline = if mode == ShardMode::Nsp {
                BaselineMode::Nsp
            } else {
                BaselineMode::Bso
            };
            let per_para: Vec<Result<Vec<PairInstance>>> = locations
                .par_iter()
                .map(|&(di, pi, doc_id)| {
                    build_pair_instances(
                        corpus,
                        &span_index,
                        di,
                        pi,
                        baseline,
                        cfg,
                        vocab_size,
                        epoch.stream_for(doc_id, pi),
                    )
                })
                .collect();
            let mut out = Vec::new();
            for r in per_para {
                out.extend(r?);
            }
            Ok(ShardData::Pairs(out))
        }
    }
}

pub fn write_shards(
    dir: &Path,
    data: &ShardData,
    cfg: &WindowConfig,
    mode: ShardMode,
    seed: u64,
    vocab_size: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = ShardConfig {
        mode,
        window: cfg.clone(),
        seed,
        vocab_size,
        num_instances: data.len(),
    };
    let cfg_path = dir.join("config.json");
    let mut f = std::fs::File::create(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    serde_json::to_writer_pretty(&mut f, &config)?;
    f.write_all(b"\n").map_err(|e| Error::io(&cfg_path, e))?;

    let inst_path = dir.join("instances-00000.jsonl");
    let f = std::fs::File::create(&inst_path).map_err(|e| Error::io(&inst_path, e))?;
    let mut w = BufWriter::new(f);
    match data {
        ShardData::Conpono(instances) => {
            for inst in instances {
                serde_json::to_writer(&mut w, inst)?;
                w.write_all(b"\n").map_err(|e| Error::io(&inst_path, e))?;
            }
        }
        ShardData::Pairs(pairs) => {
            for pair in pairs {
                serde_json::to_writer(&mut w, pair)?;
                w.write_all(b"\n").map_err(|e| Error::io(&inst_path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&inst_path, e))?;
    Ok(())
}

pub fn read_shards(dir: &Path) -> Result<(ShardConfig, ShardData)> {
    let cfg_path = dir.join("config.json");
    let bytes = std::fs::read(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config: ShardConfig = serde_json::from_slice(&bytes)?;

    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("instances-") && n.ends_with(".jsonl"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no instances-*.jsonl files in {}",
            dir.display()
        )));
    }

    let mut conpono = Vec::new();
    let mut pairs = Vec::new();
    for path in files {
        let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |e: serde_json::Error| Error::Malformed {
                path: path.clone(),
                msg: format!("line {}: {e}", lineno + 1),
            };
            match config.mode {
                ShardMode::Conpono => {
                    conpono.push(serde_json::from_str(&line).map_err(malformed)?)
                }
                ShardMode::Nsp | ShardMode::Bso => {
                    pairs.push(serde_json::from_str(&line).map_err(malformed)?)
                }
            }
        }
    }
    let data = match config.mode {
        ShardMode::Conpono => ShardData::Conpono(conpono),
        ShardMode::Nsp | ShardMode::Bso => ShardData::Pairs(pairs),
    };
    Ok((config, data))
}
