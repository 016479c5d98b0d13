//! Task, merge and machine types shared by every other module.
//!
//! A [`TaskRequest`] is one viewer's request to process one GOP. Requests that
//! get merged are carried together by a single [`QueuedTask`], which is the
//! unit the scheduler dispatches and a machine executes.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Processing operation applied to a GOP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperationKind {
    ReduceResolution,
    ChangeCodec,
    AdjustBitRate,
    ChangeFrameRate,
}

impl OperationKind {
    pub const ALL: [OperationKind; 4] = [
        OperationKind::ReduceResolution,
        OperationKind::ChangeCodec,
        OperationKind::AdjustBitRate,
        OperationKind::ChangeFrameRate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperationKind::ReduceResolution => "reduce_resolution",
            OperationKind::ChangeCodec => "change_codec",
            OperationKind::AdjustBitRate => "adjust_bit_rate",
            OperationKind::ChangeFrameRate => "change_frame_rate",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for OperationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperationKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        OperationKind::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| SimError::UnknownOperation(s.to_string()))
    }
}

/// How much computation an arriving request shares with a queued one.
///
/// The derived order follows reuse: `DataLevel < OperationLevel < TaskLevel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeLevel {
    DataLevel,
    OperationLevel,
    TaskLevel,
}

impl MergeLevel {
    /// Detection order: most reuse first.
    pub const PROBE_ORDER: [MergeLevel; 3] = [
        MergeLevel::TaskLevel,
        MergeLevel::OperationLevel,
        MergeLevel::DataLevel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MergeLevel::TaskLevel => "task",
            MergeLevel::OperationLevel => "operation",
            MergeLevel::DataLevel => "data",
        }
    }
}

impl fmt::Display for MergeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One GOP-processing request as submitted by a viewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub request_id: u64,
    pub video_id: Arc<str>,
    pub gop_index: u32,
    pub operation: OperationKind,
    /// `key=value` pairs configuring the operation.
    pub params: Arc<[String]>,
    pub arrival_time: f64,
    /// Absolute deadline in simulation seconds.
    pub deadline: f64,
    pub exec_mean: f64,
    pub exec_std: f64,
}

impl TaskRequest {
    pub fn estimate(&self) -> ExecEstimate {
        ExecEstimate::new(self.exec_mean, self.exec_std)
    }

    /// Checks the field invariants. Separator characters are rejected in
    /// identifying fields so that merge keys stay unambiguous.
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &'static str, reason: String| {
            Err(SimError::InvalidRequest {
                request_id: self.request_id,
                field,
                reason,
            })
        };
        if !self.arrival_time.is_finite() || self.arrival_time < 0.0 {
            return fail(
                "arrival_time",
                format!("arrival_time {} must be finite and >= 0", self.arrival_time),
            );
        }
        if !self.deadline.is_finite() || self.deadline < self.arrival_time {
            return fail(
                "deadline",
                format!(
                    "deadline {} must be finite and >= arrival_time {}",
                    self.deadline, self.arrival_time
                ),
            );
        }
        if !self.exec_mean.is_finite() || self.exec_mean <= 0.0 {
            return fail(
                "exec_mean",
                format!("exec_mean {} must be > 0", self.exec_mean),
            );
        }
        if !self.exec_std.is_finite() || self.exec_std < 0.0 {
            return fail(
                "exec_std",
                format!("exec_std {} must be >= 0", self.exec_std),
            );
        }
        if self.video_id.is_empty() || self.video_id.contains('|') {
            return fail(
                "video_id",
                format!(
                    "video_id {:?} must be non-empty and contain no '|'",
                    self.video_id
                ),
            );
        }
        for p in self.params.iter() {
            if !p.contains('=') || p.contains(',') || p.contains('|') {
                return fail(
                    "params",
                    format!("param {p:?} must be key=value without ',' or '|'"),
                );
            }
        }
        Ok(())
    }
}

/// Expected execution time and its standard deviation, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecEstimate {
    pub mean: f64,
    pub std: f64,
}

impl ExecEstimate {
    pub fn new(mean: f64, std: f64) -> Self {
        ExecEstimate { mean, std }
    }

    /// `mean + 2 * std`, the duration used by every completion estimate.
    pub fn pessimistic(&self) -> f64 {
        self.mean + 2.0 * self.std
    }
}

/// Fraction of an added request's execution time that a merge still costs,
/// per merge level. Task-level merges are free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFactors")]
pub struct MergeCostFactors {
    operation: f64,
    data: f64,
}

#[derive(Deserialize)]
struct RawFactors {
    operation: f64,
    data: f64,
}

impl TryFrom<RawFactors> for MergeCostFactors {
    type Error = SimError;

    fn try_from(raw: RawFactors) -> Result<Self> {
        MergeCostFactors::new(raw.operation, raw.data)
    }
}

impl Default for MergeCostFactors {
    fn default() -> Self {
        MergeCostFactors {
            operation: 0.5,
            data: 0.9,
        }
    }
}

impl MergeCostFactors {
    /// `operation` must lie in (0, 1) and `data` in (0, 1].
    pub fn new(operation: f64, data: f64) -> Result<Self> {
        if !(operation > 0.0 && operation < 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "operation-level merge factor {operation} must lie in (0, 1)"
            )));
        }
        if !(data > 0.0 && data <= 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "data-level merge factor {data} must lie in (0, 1]"
            )));
        }
        Ok(MergeCostFactors { operation, data })
    }

    pub fn operation(&self) -> f64 {
        self.operation
    }

    pub fn data(&self) -> f64 {
        self.data
    }

    pub fn for_level(&self, level: MergeLevel) -> f64 {
        match level {
            MergeLevel::TaskLevel => 0.0,
            MergeLevel::OperationLevel => self.operation,
            MergeLevel::DataLevel => self.data,
        }
    }
}

/// Execution estimate of `base` after merging `addition` into it at `level`.
///
/// The mean grows by `κ · addition.mean` and the stds combine as independent
/// noise: `sqrt(base.std² + (κ · addition.std)²)`.
pub fn merged_exec_estimate(
    base: ExecEstimate,
    addition: ExecEstimate,
    level: MergeLevel,
    factors: &MergeCostFactors,
) -> ExecEstimate {
    let kappa = factors.for_level(level);
    if kappa == 0.0 {
        return base;
    }
    let scaled_std = kappa * addition.std;
    ExecEstimate {
        mean: base.mean + kappa * addition.mean,
        std: (base.std * base.std + scaled_std * scaled_std).sqrt(),
    }
}

/// Identity of a schedulable unit: the request id of its root request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskState {
    InBatchQueue,
    InLocalQueue(usize),
    Executing(usize),
    Done,
}

impl TaskState {
    /// Whether a new request may still be merged into a task in this state.
    pub fn is_mergeable(self) -> bool {
        matches!(self, TaskState::InBatchQueue | TaskState::InLocalQueue(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedMember {
    pub request: TaskRequest,
    pub level: MergeLevel,
}

/// A schedulable unit: a root request plus the requests merged into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuedTask {
    pub root: TaskRequest,
    pub members: Vec<MergedMember>,
    pub effective: ExecEstimate,
    /// Earliest deadline over the root and all members.
    pub effective_deadline: f64,
    pub state: TaskState,
}

impl QueuedTask {
    pub fn new(root: TaskRequest) -> Self {
        QueuedTask {
            effective: root.estimate(),
            effective_deadline: root.deadline,
            members: Vec::new(),
            root,
            state: TaskState::InBatchQueue,
        }
    }

    pub fn id(&self) -> TaskId {
        TaskId(self.root.request_id)
    }

    pub fn pessimistic_duration(&self) -> f64 {
        self.effective.pessimistic()
    }

    /// Folds `request` into this unit.
    pub fn merge(&mut self, request: TaskRequest, level: MergeLevel, factors: &MergeCostFactors) {
        self.effective = merged_exec_estimate(self.effective, request.estimate(), level, factors);
        self.effective_deadline = self.effective_deadline.min(request.deadline);
        self.members.push(MergedMember { request, level });
    }

    /// Root first, then members in merge order.
    pub fn requests(&self) -> impl Iterator<Item = &TaskRequest> {
        std::iter::once(&self.root).chain(self.members.iter().map(|m| &m.request))
    }

    pub fn request_count(&self) -> usize {
        1 + self.members.len()
    }
}

/// A task currently occupying a machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Running {
    pub task: TaskId,
    pub started_at: f64,
    /// Pessimistic estimate `μ + 2σ` fixed when the task started.
    pub est_duration: f64,
    /// When the task actually finishes. Only the engine knows this; estimators
    /// must not read it.
    pub end_at: f64,
}

impl Running {
    /// Estimated remaining time at `now`, never negative.
    pub fn remaining_estimate(&self, now: f64) -> f64 {
        (self.started_at + self.est_duration - now).max(0.0)
    }
}

/// One emulated VM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineState {
    pub machine_id: usize,
    pub running: Option<Running>,
    /// Committed tasks waiting for this machine, in execution order.
    pub local_queue: VecDeque<TaskId>,
}

impl MachineState {
    pub fn new(machine_id: usize) -> Self {
        MachineState {
            machine_id,
            running: None,
            local_queue: VecDeque::new(),
        }
    }

    pub fn is_idle(&self) -> bool {
        self.running.is_none()
    }

    pub fn remaining_estimate(&self, now: f64) -> f64 {
        self.running.map_or(0.0, |r| r.remaining_estimate(now))
    }

    /// Whether the dispatcher may hand this machine another task. An idle
    /// machine with nothing queued always accepts one, so a zero capacity
    /// still lets tasks flow straight to execution.
    pub fn has_room(&self, capacity: usize) -> bool {
        self.local_queue.len() < capacity || (self.is_idle() && self.local_queue.is_empty())
    }
}
