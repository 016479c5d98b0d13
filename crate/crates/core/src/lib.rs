//! Merge-aware admission control for an oversubscribed task-processing
//! backend, and a discrete-event emulator to evaluate it.
//!
//! Arriving GOP-processing requests are checked against three hash tables
//! (identical task, same operation, same data). A detected candidate is merged
//! only if replaying the queues with and without the merge shows no extra
//! deadline misses. The emulator measures deadline miss rate and makespan
//! under FCFS, EDF and max-urgency batch scheduling.

pub mod admission;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod scheduling;
pub mod similarity;
pub mod task;
pub mod workload;

pub use admission::{
    assess_merge, estimate_completion, virtual_replay, CompletionEstimate, ImpactReport,
    SystemSnapshot,
};
pub use engine::{actual_duration, run, SimConfig, Simulation};
pub use error::{Result, SimError};
pub use experiment::{emit, run_experiment, SweepConfig, SweepResult};
pub use metrics::{AuditEvent, MergeCounts, RequestOutcome, RunMetrics};
pub use scheduling::{order_key, ClusterState, SchedulingPolicy};
pub use similarity::{merge_keys, MergeKey, SimilarityIndex};
pub use task::{
    merged_exec_estimate, ExecEstimate, MachineState, MergeCostFactors, MergeLevel, OperationKind,
    QueuedTask, TaskId, TaskRequest, TaskState,
};
pub use workload::{generate, read_trace, write_trace, WorkloadSpec};
