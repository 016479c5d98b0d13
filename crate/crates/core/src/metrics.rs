//! Per-run results and the optional audit trail.

use serde::{Deserialize, Serialize};

use crate::task::{MergeLevel, TaskId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeCounts {
    pub task: usize,
    pub operation: usize,
    pub data: usize,
}

impl MergeCounts {
    pub fn total(&self) -> usize {
        self.task + self.operation + self.data
    }

    pub fn bump(&mut self, level: MergeLevel) {
        match level {
            MergeLevel::TaskLevel => self.task += 1,
            MergeLevel::OperationLevel => self.operation += 1,
            MergeLevel::DataLevel => self.data += 1,
        }
    }
}

/// Fate of one original request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub request_id: u64,
    /// Unit that executed the request.
    pub task: TaskId,
    pub machine_id: usize,
    pub completion: f64,
    pub deadline: f64,
    pub late: bool,
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    MergeDecision {
        time: f64,
        request_id: u64,
        candidate: TaskId,
        level: MergeLevel,
        /// The candidate was found through a redirected binding, so an older
        /// task with the same key may also be queued.
        tie: bool,
        misses_with_merge: usize,
        misses_without_merge: usize,
        approved: bool,
    },
    Completion {
        time: f64,
        task: TaskId,
        machine_id: usize,
        request_ids: Vec<u64>,
        late: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub requests: usize,
    pub late: usize,
    /// `late / requests`, 0 for an empty workload.
    pub deadline_miss_rate: f64,
    /// Last completion minus first arrival.
    pub makespan: f64,
    pub merges: MergeCounts,
    pub merge_rejections: usize,
    /// Number of units actually executed.
    pub units_executed: usize,
    /// Total machine time spent executing.
    pub busy_time: f64,
    /// Longest single execution.
    pub max_duration: f64,
    /// Approved merges whose impact report showed extra misses. Always zero
    /// unless admission is broken.
    pub safety_violations: usize,
    pub outcomes: Vec<RequestOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<Vec<AuditEvent>>,
}

impl RunMetrics {
    pub fn empty() -> Self {
        RunMetrics {
            requests: 0,
            late: 0,
            deadline_miss_rate: 0.0,
            makespan: 0.0,
            merges: MergeCounts::default(),
            merge_rejections: 0,
            units_executed: 0,
            busy_time: 0.0,
            max_duration: 0.0,
            safety_violations: 0,
            outcomes: Vec::new(),
            audit: None,
        }
    }

    /// The headline numbers without per-request detail.
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            requests: self.requests,
            late: self.late,
            deadline_miss_rate: self.deadline_miss_rate,
            makespan: self.makespan,
            merges: self.merges,
            merge_rejections: self.merge_rejections,
            units_executed: self.units_executed,
            busy_time: self.busy_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub requests: usize,
    pub late: usize,
    pub deadline_miss_rate: f64,
    pub makespan: f64,
    pub merges: MergeCounts,
    pub merge_rejections: usize,
    pub units_executed: usize,
    pub busy_time: f64,
}

/// Recomputes `(late, requests)` from completion records in an audit log.
pub fn late_from_audit(audit: &[AuditEvent]) -> (usize, usize) {
    audit.iter().fold((0, 0), |(late, total), e| match e {
        AuditEvent::Completion {
            late: l,
            request_ids,
            ..
        } => (late + l, total + request_ids.len()),
        _ => (late, total),
    })
}
