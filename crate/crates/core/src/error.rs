use thiserror::Error;

use crate::protocol::{DecodeError, NodeId, TaskId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("parameter vector has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },

    #[error("parameter vector contains non-finite entries")]
    NonFinite,

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("empty mini-batch")]
    EmptyBatch,

    #[error("mini-batch size {batch} exceeds local partition size {local}")]
    BatchTooLarge { batch: usize, local: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("learning rate {eta} outside (0, {upper}) required by the rate bound")]
    RateDomain { eta: f64, upper: f64 },

    #[error("invalid hyperparameters: {0}")]
    Hyper(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("duplicate update for task {0}")]
    DuplicateUpdate(TaskId),

    #[error("duplicate pull from worker {worker} for task {task}")]
    DuplicatePull { worker: u32, task: TaskId },

    #[error("stage end is missing the evaluation push of worker {0}")]
    MissingEvalPush(u32),

    #[error("partition weights sum to {0}, expected 1")]
    WeightSum(f64),

    #[error("unknown endpoint {0}")]
    UnknownEndpoint(NodeId),

    #[error("event budget of {0} exhausted (livelock?)")]
    Livelock(u64),

    #[error("cluster stalled before completion: {0}")]
    Stalled(String),

    #[error("server parameters diverged at task {0}")]
    Diverged(TaskId),

    #[error("transport: {0}")]
    Transport(String),

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
