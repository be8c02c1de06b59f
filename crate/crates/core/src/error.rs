use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("target placement infeasible: anchor {anchor_start}..={anchor_end}, k={k}, target_len={target_len} does not fit a paragraph of {paragraph_len} sentences")]
    InfeasiblePlacement {
        anchor_start: usize,
        anchor_end: usize,
        k: i32,
        target_len: usize,
        paragraph_len: usize,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("shard/config mismatch: {field} is {shard_value} in the shards but {config_value} in the training config")]
    ShardMismatch {
        field: &'static str,
        shard_value: String,
        config_value: String,
    },

    #[error("probe dataset error: {0}")]
    Probe(String),

    #[error("prediction files disagree on example ids: {0}")]
    PredictionIdMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("malformed input at {path}: {msg}")]
    Malformed { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
