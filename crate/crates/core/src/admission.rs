//! Merge appropriateness: will merging an arriving request into a detected
//! candidate cause deadline violations that would not happen otherwise?
//!
//! Two virtual copies of the system are replayed to completion, one with the
//! merge applied and one with the request enqueued on its own. The merge is
//! approved only when the merged scenario has no more misses than the other.
//! Completion times follow
//!
//! ```text
//! C = τ + e_r + Σ_ahead (μ_p + 2σ_p) + (μ_i + 2σ_i)
//! ```
//!
//! where `τ` is the current time, `e_r` the estimated remaining time of the
//! machine's running task, and the sum covers the tasks queued ahead on that
//! machine.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scheduling::{ClusterState, SchedulingPolicy};
use crate::task::{MachineState, MergeCostFactors, MergeLevel, QueuedTask, TaskId, TaskRequest};

/// A deep copy of the batch queue and every machine at one instant.
pub type SystemSnapshot = ClusterState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionEstimate {
    pub request_id: u64,
    /// Unit carrying the request.
    pub task: TaskId,
    pub machine_id: usize,
    pub completion: f64,
    pub deadline: f64,
    pub misses: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub misses_with_merge: usize,
    pub misses_without_merge: usize,
    pub approved: bool,
    /// `(with merge, without merge)` per original request, by request id.
    pub per_task: Vec<(CompletionEstimate, CompletionEstimate)>,
}

/// Estimated completion of `task` on `machine` behind `queued_ahead`.
pub fn estimate_completion(
    task: &QueuedTask,
    machine: &MachineState,
    queued_ahead: &[&QueuedTask],
    now: f64,
) -> f64 {
    completion_time(
        now,
        machine.remaining_estimate(now),
        queued_ahead.iter().map(|t| t.pessimistic_duration()),
        task.pessimistic_duration(),
    )
}

fn completion_time(now: f64, remaining: f64, ahead: impl Iterator<Item = f64>, own: f64) -> f64 {
    let mut c = now + remaining;
    for d in ahead {
        c += d;
    }
    c + own
}

/// Drains a copy of `snapshot` with no further arrivals and returns the
/// estimated completion of every original request, sorted by request id.
pub fn virtual_replay(
    snapshot: &SystemSnapshot,
    policy: SchedulingPolicy,
) -> Vec<CompletionEstimate> {
    replay_owned(snapshot.clone(), policy)
}

fn replay_owned(mut sim: ClusterState, policy: SchedulingPolicy) -> Vec<CompletionEstimate> {
    let now = sim.now;
    let mut out = Vec::with_capacity(sim.tasks.len() + 4);

    // Running tasks finish when their estimate says so, never before now.
    for m in sim.machines.iter_mut() {
        if let Some(r) = m.running.as_mut() {
            r.end_at = now + r.remaining_estimate(now);
            push_requests(&mut out, &sim.tasks[&r.task], m.machine_id, r.end_at);
        }
    }
    for m in &sim.machines {
        let mut ahead: Vec<&QueuedTask> = Vec::with_capacity(m.local_queue.len());
        for id in &m.local_queue {
            let task = &sim.tasks[id];
            let c = estimate_completion(task, m, &ahead, now);
            push_requests(&mut out, task, m.machine_id, c);
            ahead.push(task);
        }
    }

    sim.order_batch(policy);
    loop {
        loop {
            let assigned = sim.assign_from_front();
            for a in &assigned {
                let m = &sim.machines[a.machine];
                let ahead: Vec<&QueuedTask> = m
                    .local_queue
                    .iter()
                    .take_while(|id| **id != a.task)
                    .map(|id| &sim.tasks[id])
                    .collect();
                let task = &sim.tasks[&a.task];
                let c = estimate_completion(task, m, &ahead, sim.now);
                push_requests(&mut out, task, a.machine, c);
            }
            let started = sim.start_idle(QueuedTask::pessimistic_duration);
            if assigned.is_empty() && started.is_empty() {
                break;
            }
        }
        if sim.batch.is_empty() {
            break;
        }
        let next = sim
            .machines
            .iter()
            .filter_map(|m| m.running.map(|r| r.end_at))
            .fold(f64::INFINITY, f64::min);
        debug_assert!(
            next.is_finite(),
            "settled machines run something while work waits"
        );
        if !next.is_finite() {
            break;
        }
        sim.now = next;
        for m in sim.machines.iter_mut() {
            if m.running.is_some_and(|r| r.end_at <= next) {
                let r = m.running.take().expect("checked above");
                sim.tasks.remove(&r.task);
            }
        }
    }

    out.sort_unstable_by_key(|e| e.request_id);
    out
}

fn push_requests(
    out: &mut Vec<CompletionEstimate>,
    task: &QueuedTask,
    machine_id: usize,
    completion: f64,
) {
    for r in task.requests() {
        out.push(CompletionEstimate {
            request_id: r.request_id,
            task: task.id(),
            machine_id,
            completion,
            deadline: r.deadline,
            misses: completion > r.deadline,
        });
    }
}

/// Replays the system with and without merging `incoming` into `candidate`
/// and approves the merge iff it does not add deadline misses. Misses are
/// counted per original request against that request's own deadline.
pub fn assess_merge(
    candidate: TaskId,
    incoming: &TaskRequest,
    level: MergeLevel,
    snapshot: &SystemSnapshot,
    policy: SchedulingPolicy,
    factors: &MergeCostFactors,
) -> Result<ImpactReport> {
    match snapshot.tasks.get(&candidate) {
        Some(t) if t.state.is_mergeable() => {}
        Some(t) => {
            return Err(SimError::consistency(
                candidate,
                format!("merge candidate is {:?}", t.state),
            ))
        }
        None => {
            return Err(SimError::consistency(
                candidate,
                "merge candidate missing from snapshot",
            ))
        }
    }
    let incoming_id = TaskId(incoming.request_id);
    if snapshot.tasks.contains_key(&incoming_id) {
        return Err(SimError::consistency(
            incoming_id,
            "arriving request is already queued",
        ));
    }

    let mut merged = snapshot.clone();
    merged
        .tasks
        .get_mut(&candidate)
        .expect("checked above")
        .merge(incoming.clone(), level, factors);

    let mut separate = snapshot.clone();
    separate.enqueue(QueuedTask::new(incoming.clone()));

    let with = replay_owned(merged, policy);
    let without = replay_owned(separate, policy);
    if with.len() != without.len() {
        return Err(SimError::consistency(
            candidate,
            "replays disagree on the request set",
        ));
    }
    let misses_with_merge = with.iter().filter(|e| e.misses).count();
    let misses_without_merge = without.iter().filter(|e| e.misses).count();
    Ok(ImpactReport {
        misses_with_merge,
        misses_without_merge,
        approved: misses_with_merge <= misses_without_merge,
        per_task: with.into_iter().zip(without).collect(),
    })
}
