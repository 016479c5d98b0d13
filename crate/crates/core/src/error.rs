use std::path::PathBuf;

use crate::task::TaskId;

/// Errors raised while validating inputs or running a simulation.
#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("request {request_id}: field `{field}`: {reason}")]
    InvalidRequest {
        request_id: u64,
        field: &'static str,
        reason: String,
    },

    #[error("workload is not sorted by arrival time at request {request_id}")]
    UnsortedWorkload { request_id: u64 },

    #[error("duplicate request id {0}")]
    DuplicateRequestId(u64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),

    #[error("unknown operation `{0}`")]
    UnknownOperation(String),

    #[error("unknown scheduling policy `{0}` (expected fcfs, edf or mu)")]
    UnknownPolicy(String),

    /// The engine's own bookkeeping disagreed with itself. Runs abort on this.
    #[error("internal consistency fault on task {task:?}: {reason}")]
    Consistency { task: TaskId, reason: String },

    #[error("{path}:{line}: field `{field}`: {reason}")]
    TraceParse {
        path: PathBuf,
        line: usize,
        field: String,
        reason: String,
    },

    #[error("{path}:{line}: duplicate request id {request_id}")]
    TraceDuplicate {
        path: PathBuf,
        line: usize,
        request_id: u64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("sweep cell (policy {policy}, {task_count} tasks, seed {seed}) failed: {source}")]
    Sweep {
        policy: String,
        task_count: usize,
        seed: u64,
        #[source]
        source: Box<SimError>,
    },

    #[error("{0}")]
    Output(String),
}

impl SimError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn consistency(task: TaskId, reason: impl Into<String>) -> Self {
        SimError::Consistency {
            task,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
