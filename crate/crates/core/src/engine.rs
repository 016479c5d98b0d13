//! Discrete-event emulation of the backend: arrival, admission, dispatch,
//! execution and completion.
//!
//! Events are ordered by `(time, sequence)`. All events sharing a timestamp
//! are handled before the dispatcher runs, so requests arriving together are
//! admitted (and possibly merged) before any of them reaches a machine.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::admission::assess_merge;
use crate::error::{Result, SimError};
use crate::metrics::{AuditEvent, MergeCounts, RequestOutcome, RunMetrics};
use crate::scheduling::{ClusterState, SchedulingPolicy};
use crate::similarity::SimilarityIndex;
use crate::task::{MergeCostFactors, QueuedTask, TaskId, TaskRequest, TaskState};

/// Shortest duration a noisy sample may take.
pub const MIN_DURATION: f64 = 1e-3;

/// Stream of the seeded generator reserved for execution noise, so that it
/// never overlaps the workload generator fed the same seed.
const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub machines: usize,
    pub local_queue_capacity: usize,
    pub policy: SchedulingPolicy,
    pub merge_enabled: bool,
    pub merge_factors: MergeCostFactors,
    pub rng_seed: u64,
    /// Sample execution times instead of using the mean.
    pub exec_noise: bool,
    /// Keep a per-event audit log in the metrics.
    pub audit: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            machines: 8,
            local_queue_capacity: 1,
            policy: SchedulingPolicy::Fcfs,
            merge_enabled: true,
            merge_factors: MergeCostFactors::default(),
            rng_seed: 0,
            exec_noise: true,
            audit: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.machines == 0 {
            return Err(SimError::InvalidConfig(
                "at least one machine is required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    /// Index into the workload.
    Arrival(usize),
    Completion(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub sequence: u64,
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so that `BinaryHeap` pops the earliest event.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.sequence.cmp(&self.sequence))
    }
}

/// Execution time of `task` once it starts. Without noise (or with σ = 0)
/// this is the effective mean; otherwise a normal sample truncated below at
/// `max(MIN_DURATION, μ - 3σ)`.
pub fn actual_duration<R: Rng + ?Sized>(task: &QueuedTask, noise: bool, rng: &mut R) -> f64 {
    let mean = task.effective.mean;
    let std = task.effective.std;
    if !noise || std == 0.0 {
        return mean;
    }
    let floor = (mean - 3.0 * std).max(MIN_DURATION);
    let normal = Normal::new(mean, std).expect("std is finite and positive");
    loop {
        let v = normal.sample(rng);
        if v >= floor {
            return v;
        }
    }
}

/// A running simulation. Use [`run`] unless you need to observe
/// intermediate states.
pub struct Simulation {
    config: SimConfig,
    workload: Vec<TaskRequest>,
    events: BinaryHeap<Event>,
    next_sequence: u64,
    clock: f64,
    state: ClusterState,
    index: SimilarityIndex,
    rng: ChaCha8Rng,
    outcomes: Vec<RequestOutcome>,
    merges: MergeCounts,
    rejections: usize,
    safety_violations: usize,
    units_executed: usize,
    busy_time: f64,
    max_duration: f64,
    audit: Vec<AuditEvent>,
}

impl Simulation {
    /// Validates the workload and queues every arrival. Requests must be
    /// sorted by arrival time; simultaneous arrivals are admitted in request
    /// id order.
    pub fn new(workload: Vec<TaskRequest>, config: SimConfig) -> Result<Self> {
        config.validate()?;
        validate_workload(&workload)?;

        let mut order: Vec<usize> = (0..workload.len()).collect();
        order.sort_by(|&a, &b| {
            workload[a]
                .arrival_time
                .total_cmp(&workload[b].arrival_time)
                .then(workload[a].request_id.cmp(&workload[b].request_id))
        });
        let mut events = BinaryHeap::with_capacity(workload.len() + config.machines);
        for (seq, &i) in order.iter().enumerate() {
            events.push(Event {
                time: workload[i].arrival_time,
                kind: EventKind::Arrival(i),
                sequence: seq as u64,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(NOISE_STREAM);
        Ok(Simulation {
            state: ClusterState::new(config.machines, config.local_queue_capacity),
            next_sequence: order.len() as u64,
            clock: 0.0,
            events,
            workload,
            index: SimilarityIndex::new(),
            rng,
            outcomes: Vec::new(),
            merges: MergeCounts::default(),
            rejections: 0,
            safety_violations: 0,
            units_executed: 0,
            busy_time: 0.0,
            max_duration: 0.0,
            audit: Vec::new(),
            config,
        })
    }

    pub fn now(&self) -> f64 {
        self.clock
    }

    pub fn next_event_time(&self) -> Option<f64> {
        self.events.peek().map(|e| e.time)
    }

    /// Current scheduler state; cloning it yields an admission snapshot.
    pub fn state(&self) -> &ClusterState {
        &self.state
    }

    pub fn index(&self) -> &SimilarityIndex {
        &self.index
    }

    /// Outcomes of requests completed so far, in completion order.
    pub fn outcomes(&self) -> &[RequestOutcome] {
        &self.outcomes
    }

    /// Handles every event at the next timestamp, then dispatches. Returns
    /// `false` once no events remain.
    pub fn step(&mut self) -> Result<bool> {
        let Some(time) = self.next_event_time() else {
            return Ok(false);
        };
        if time < self.clock {
            return Err(SimError::consistency(
                TaskId(0),
                format!("clock went back from {} to {time}", self.clock),
            ));
        }
        self.clock = time;
        self.state.now = time;
        while self.events.peek().is_some_and(|e| e.time == time) {
            let event = self.events.pop().expect("peeked");
            match event.kind {
                EventKind::Arrival(i) => {
                    let req = self.workload[i].clone();
                    self.admit(req)?;
                }
                EventKind::Completion(m) => self.complete(m)?,
            }
        }
        self.settle();
        if !self.state.is_work_conserving() {
            return Err(SimError::consistency(
                TaskId(0),
                format!("dispatcher left work idle at {time}"),
            ));
        }
        Ok(true)
    }

    fn admit(&mut self, req: TaskRequest) -> Result<()> {
        if !self.config.merge_enabled {
            self.state.enqueue(QueuedTask::new(req));
            return Ok(());
        }
        let state = &self.state;
        let hit = self.index.lookup(&req, |id| state.state_of(id));
        let Some(hit) = hit else {
            let task = QueuedTask::new(req);
            self.index.on_arrival_unmerged(&task, false);
            self.state.enqueue(task);
            return Ok(());
        };

        let report = assess_merge(
            hit.task,
            &req,
            hit.level,
            &self.state,
            self.config.policy,
            &self.config.merge_factors,
        )?;
        if report.approved && report.misses_with_merge > report.misses_without_merge {
            self.safety_violations += 1;
        }
        if self.config.audit {
            self.audit.push(AuditEvent::MergeDecision {
                time: self.clock,
                request_id: req.request_id,
                candidate: hit.task,
                level: hit.level,
                tie: hit.redirected,
                misses_with_merge: report.misses_with_merge,
                misses_without_merge: report.misses_without_merge,
                approved: report.approved,
            });
        }
        if report.approved {
            let unit =
                self.state.tasks.get_mut(&hit.task).ok_or_else(|| {
                    SimError::consistency(hit.task, "approved candidate vanished")
                })?;
            unit.merge(req.clone(), hit.level, &self.config.merge_factors);
            self.index.on_arrival_merged(unit, &req, hit.level)?;
            self.merges.bump(hit.level);
        } else {
            self.rejections += 1;
            let task = QueuedTask::new(req);
            self.index.on_arrival_unmerged(&task, true);
            self.state.enqueue(task);
        }
        Ok(())
    }

    fn complete(&mut self, machine: usize) -> Result<()> {
        let running = self.state.machines[machine].running.take().ok_or_else(|| {
            SimError::consistency(TaskId(0), format!("completion on idle machine {machine}"))
        })?;
        let mut task = self
            .state
            .tasks
            .remove(&running.task)
            .ok_or_else(|| SimError::consistency(running.task, "running task missing"))?;
        task.state = TaskState::Done;
        let duration = running.end_at - running.started_at;
        self.busy_time += duration;
        self.max_duration = self.max_duration.max(duration);
        self.units_executed += 1;

        let mut late = 0;
        for r in task.requests() {
            let is_late = self.clock > r.deadline;
            late += usize::from(is_late);
            self.outcomes.push(RequestOutcome {
                request_id: r.request_id,
                task: task.id(),
                machine_id: machine,
                completion: self.clock,
                deadline: r.deadline,
                late: is_late,
            });
        }
        if self.config.audit {
            self.audit.push(AuditEvent::Completion {
                time: self.clock,
                task: task.id(),
                machine_id: machine,
                request_ids: task.requests().map(|r| r.request_id).collect(),
                late,
            });
        }
        if self.config.merge_enabled {
            self.index.on_complete(&task)?;
        }
        Ok(())
    }

    fn settle(&mut self) {
        let noise = self.config.exec_noise;
        let rng = &mut self.rng;
        let before: Vec<bool> = self.state.machines.iter().map(|m| m.is_idle()).collect();
        self.state
            .settle(self.config.policy, |task| actual_duration(task, noise, rng));
        for (m, was_idle) in self.state.machines.iter().zip(before) {
            if let (true, Some(r)) = (was_idle, m.running) {
                self.events.push(Event {
                    time: r.end_at,
                    kind: EventKind::Completion(m.machine_id),
                    sequence: self.next_sequence,
                });
                self.next_sequence += 1;
            }
        }
    }

    /// Checks the index against the live state: the owner map inverts the
    /// tables and nothing points at a finished task.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let state = &self.state;
        self.index.check_consistency(|id| state.state_of(id))?;
        for m in &state.machines {
            if m.local_queue.len() > state.local_capacity {
                return Err(format!(
                    "machine {} holds {} queued tasks",
                    m.machine_id,
                    m.local_queue.len()
                ));
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunMetrics> {
        while self.step()? {}
        if !self.state.is_drained() || !self.state.tasks.is_empty() {
            return Err(SimError::consistency(
                TaskId(0),
                "simulation ended with work left",
            ));
        }
        let requests = self.workload.len();
        if self.outcomes.len() != requests {
            return Err(SimError::consistency(
                TaskId(0),
                format!("{} of {requests} requests completed", self.outcomes.len()),
            ));
        }
        let late = self.outcomes.iter().filter(|o| o.late).count();
        let first_arrival = self
            .workload
            .iter()
            .map(|r| r.arrival_time)
            .fold(f64::INFINITY, f64::min);
        let last_completion = self
            .outcomes
            .iter()
            .map(|o| o.completion)
            .fold(f64::NEG_INFINITY, f64::max);
        let makespan = if requests == 0 {
            0.0
        } else {
            last_completion - first_arrival
        };
        Ok(RunMetrics {
            requests,
            late,
            deadline_miss_rate: if requests == 0 {
                0.0
            } else {
                late as f64 / requests as f64
            },
            makespan,
            merges: self.merges,
            merge_rejections: self.rejections,
            units_executed: self.units_executed,
            busy_time: self.busy_time,
            max_duration: self.max_duration,
            safety_violations: self.safety_violations,
            outcomes: self.outcomes,
            audit: self.config.audit.then_some(self.audit),
        })
    }
}

fn validate_workload(workload: &[TaskRequest]) -> Result<()> {
    let mut seen = HashSet::with_capacity(workload.len());
    let mut last = f64::NEG_INFINITY;
    for r in workload {
        r.validate()?;
        if !seen.insert(r.request_id) {
            return Err(SimError::DuplicateRequestId(r.request_id));
        }
        if r.arrival_time < last {
            return Err(SimError::UnsortedWorkload {
                request_id: r.request_id,
            });
        }
        last = r.arrival_time;
    }
    Ok(())
}

/// Runs `workload` to completion under `config`.
pub fn run(workload: &[TaskRequest], config: &SimConfig) -> Result<RunMetrics> {
    Simulation::new(workload.to_vec(), config.clone())?.finish()
}
