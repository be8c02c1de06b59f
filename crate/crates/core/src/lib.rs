//! Desk-scale inter-sentence contrastive pretraining.
//!
//! The pipeline: ingest raw text into token-id documents, sample anchor/target
//! training instances with hard and random negatives, train a small
//! transformer encoder under a distance-contrastive objective (plus masked
//! token modeling and NSP/BSO baselines), then probe the frozen encoder on
//! synthetic ordering and coherence tasks.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalprobe;
pub mod manifest;
pub mod numcore;
pub mod objective;
pub mod sampler;
pub mod seeding;
pub mod trainer;

pub use error::{Error, Result};
