//! The flat JSON mirror of [`TrainConfig`](super::TrainConfig): the on-disk
//! config format. Unknown keys are errors; missing keys fall back to the
//! shard geometry (window fields) or the defaults.

use serde::Deserialize;

use crate::encoder::{Coupling, EncoderConfig};
use crate::error::{Error, Result};
use crate::sampler::{ShardConfig, ShardMode, WindowConfig};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatTrainConfig {
    pub objective: Option<String>,
    pub coupling: Option<String>,
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub heads: Option<usize>,
    pub intermediate: Option<usize>,
    pub vocab_size: Option<usize>,
    pub max_positions: Option<usize>,
    #[serde(rename = "K")]
    pub k_max: Option<usize>,
    pub anchor_len: Option<usize>,
    pub target_len: Option<usize>,
    pub ks_per_paragraph: Option<usize>,
    pub num_hard: Option<usize>,
    pub num_random: Option<usize>,
    pub mask_rate: Option<f64>,
    pub max_seq: Option<usize>,
    pub batch_size: Option<usize>,
    pub total_steps: Option<u64>,
    pub base_lr: Option<f64>,
    pub warmup_fraction: Option<f64>,
    pub lambda: Option<f64>,
    pub dropout: Option<f64>,
    pub seed: Option<u64>,
    pub checkpoint_interval: Option<u64>,
    pub heldout_fraction: Option<f64>,
    pub init_sigma: Option<f64>,
}

pub fn parse_shard_mode(s: &str) -> Result<ShardMode> {
    match s {
        "conpono" => Ok(ShardMode::Conpono),
        "nsp" => Ok(ShardMode::Nsp),
        "bso" => Ok(ShardMode::Bso),
        other => Err(Error::InvalidConfig(format!(
            "unknown objective mode {other:?}; expected conpono, nsp or bso"
        ))),
    }
}

pub fn parse_coupling(s: &str) -> Result<Coupling> {
    match s {
        "combined" => Ok(Coupling::Combined),
        "isolated" => Ok(Coupling::Isolated),
        "uni" => Ok(Coupling::Uni),
        other => Err(Error::InvalidConfig(format!(
            "unknown coupling {other:?}; expected combined, isolated or uni"
        ))),
    }
}

impl FlatTrainConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json)
            .map_err(|e| Error::InvalidConfig(format!("invalid training config: {e}")))
    }

    pub fn resolve(&self, shard: Option<&ShardConfig>) -> Result<TrainConfig> {
        let defaults = TrainConfig::default();
        let dw = shard.map(|s| s.window.clone()).unwrap_or_default();
        let objective = match &self.objective {
            Some(s) => parse_shard_mode(s)?,
            None => shard.map(|s| s.mode).unwrap_or(ShardMode::Conpono),
        };
        let window = WindowConfig {
            k_max: self.k_max.unwrap_or(dw.k_max),
            anchor_len: self.anchor_len.unwrap_or(dw.anchor_len),
            target_len: self.target_len.unwrap_or(dw.target_len),
            ks_per_paragraph: self.ks_per_paragraph.unwrap_or(dw.ks_per_paragraph),
            num_hard: self.num_hard.unwrap_or(dw.num_hard),
            num_random: self.num_random.unwrap_or(dw.num_random),
            mask_rate: self.mask_rate.unwrap_or(dw.mask_rate),
            max_seq: self.max_seq.unwrap_or(dw.max_seq),
        };
        let vocab_size = self
            .vocab_size
            .or(shard.map(|s| s.vocab_size))
            .ok_or_else(|| {
                Error::InvalidConfig("vocab_size missing and no shards to infer it from".into())
            })?;
        let encoder = EncoderConfig {
            layers: self.layers.unwrap_or(2),
            hidden: self.hidden.unwrap_or(128),
            heads: self.heads.unwrap_or(4),
            intermediate: self.intermediate.unwrap_or(512),
            vocab_size,
            max_positions: self.max_positions.unwrap_or(window.max_seq),
            coupling: match &self.coupling {
                Some(s) => parse_coupling(s)?,
                None => Coupling::Combined,
            },
            k_max: self.k_max.unwrap_or(window.k_max),
            init_sigma: self.init_sigma.unwrap_or(0.02),
        };
        Ok(TrainConfig {
            objective,
            encoder,
            window,
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            total_steps: self.total_steps.unwrap_or(defaults.total_steps),
            base_lr: self.base_lr.unwrap_or(defaults.base_lr),
            warmup_fraction: self.warmup_fraction.unwrap_or(defaults.warmup_fraction),
            lambda: self.lambda.unwrap_or(defaults.lambda),
            dropout: self.dropout.unwrap_or(defaults.dropout),
            seed: self.seed.unwrap_or(defaults.seed),
            checkpoint_interval: self
                .checkpoint_interval
                .unwrap_or(defaults.checkpoint_interval),
            heldout_fraction: self.heldout_fraction.unwrap_or(defaults.heldout_fraction),
        })
    }
}
