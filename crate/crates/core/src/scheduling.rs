//! Batch-queue ordering policies and the dispatcher feeding machine queues.

use std::cmp::Ordering;
use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::task::{MachineState, QueuedTask, Running, TaskId, TaskState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulingPolicy {
    /// First come, first served.
    Fcfs,
    /// Earliest deadline first.
    Edf,
    /// Max urgency: least slack first, where
    /// `slack = deadline - now - (μ + 2σ)`.
    Mu,
}

impl SchedulingPolicy {
    pub const ALL: [SchedulingPolicy; 3] = [
        SchedulingPolicy::Fcfs,
        SchedulingPolicy::Edf,
        SchedulingPolicy::Mu,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchedulingPolicy::Fcfs => "fcfs",
            SchedulingPolicy::Edf => "edf",
            SchedulingPolicy::Mu => "mu",
        }
    }
}

impl fmt::Display for SchedulingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchedulingPolicy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        SchedulingPolicy::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SimError::UnknownPolicy(s.to_string()))
    }
}

/// Dispatch priority. Smaller keys go first; ties fall back to request id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderKey {
    pub primary: f64,
    pub request_id: u64,
}

impl Eq for OrderKey {}

impl PartialOrd for OrderKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.primary
            .total_cmp(&other.primary)
            .then(self.request_id.cmp(&other.request_id))
    }
}

pub fn order_key(task: &QueuedTask, now: f64, policy: SchedulingPolicy) -> OrderKey {
    let primary = match policy {
        SchedulingPolicy::Fcfs => task.root.arrival_time,
        SchedulingPolicy::Edf => task.effective_deadline,
        SchedulingPolicy::Mu => task.effective_deadline - now - task.pessimistic_duration(),
    };
    OrderKey {
        primary,
        request_id: task.root.request_id,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub task: TaskId,
    pub machine: usize,
}

/// Live scheduler state: the batch queue, every machine, and the tasks they
/// refer to. Completed tasks are removed from `tasks`.
///
/// Admission works on clones of this structure, so a clone is a complete
/// snapshot of the system at `now`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub now: f64,
    pub local_capacity: usize,
    pub tasks: HashMap<TaskId, QueuedTask>,
    pub batch: VecDeque<TaskId>,
    pub machines: Vec<MachineState>,
}

impl ClusterState {
    pub fn new(machine_count: usize, local_capacity: usize) -> Self {
        ClusterState {
            now: 0.0,
            local_capacity,
            tasks: HashMap::new(),
            batch: VecDeque::new(),
            machines: (0..machine_count).map(MachineState::new).collect(),
        }
    }

    pub fn state_of(&self, id: TaskId) -> Option<TaskState> {
        self.tasks.get(&id).map(|t| t.state)
    }

    pub fn task(&self, id: TaskId) -> &QueuedTask {
        &self.tasks[&id]
    }

    /// Adds a fresh task to the back of the batch queue.
    pub fn enqueue(&mut self, mut task: QueuedTask) {
        task.state = TaskState::InBatchQueue;
        let id = task.id();
        self.tasks.insert(id, task);
        self.batch.push_back(id);
    }

    /// Estimated time until `machine` has worked off everything it holds:
    /// remaining time of the running task plus `μ + 2σ` of each queued one.
    pub fn availability(&self, machine: usize) -> f64 {
        let m = &self.machines[machine];
        m.local_queue
            .iter()
            .fold(m.remaining_estimate(self.now), |acc, id| {
                acc + self.tasks[id].pessimistic_duration()
            })
    }

    pub fn is_drained(&self) -> bool {
        self.batch.is_empty()
            && self
                .machines
                .iter()
                .all(|m| m.is_idle() && m.local_queue.is_empty())
    }

    /// Sorts the batch queue by `policy` at the current time.
    pub fn order_batch(&mut self, policy: SchedulingPolicy) {
        let now = self.now;
        let mut keyed: Vec<(OrderKey, TaskId)> = self
            .batch
            .iter()
            .map(|id| (order_key(&self.tasks[id], now, policy), *id))
            .collect();
        keyed.sort_unstable_by_key(|k| k.0);
        self.batch = keyed.into_iter().map(|(_, id)| id).collect();
    }

    /// Orders the batch queue, then moves tasks from its front into local
    /// queues while any machine has room. Each task goes to the machine with
    /// the smallest [`availability`](Self::availability), ties by machine id.
    pub fn dispatch(&mut self, policy: SchedulingPolicy) -> Vec<Assignment> {
        if self.batch.is_empty() || !self.any_room() {
            return Vec::new();
        }
        self.order_batch(policy);
        self.assign_from_front()
    }

    fn any_room(&self) -> bool {
        self.machines
            .iter()
            .any(|m| m.has_room(self.local_capacity))
    }

    /// Dispatch without reordering: the batch queue is taken as already sorted.
    pub(crate) fn assign_from_front(&mut self) -> Vec<Assignment> {
        let mut out = Vec::new();
        while !self.batch.is_empty() {
            let Some(machine) = self.pick_machine() else {
                break;
            };
            let task = self.batch.pop_front().expect("non-empty batch");
            self.tasks
                .get_mut(&task)
                .expect("batch entries are live")
                .state = TaskState::InLocalQueue(machine);
            self.machines[machine].local_queue.push_back(task);
            out.push(Assignment { task, machine });
        }
        out
    }

    fn pick_machine(&self) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for m in &self.machines {
            if !m.has_room(self.local_capacity) {
                continue;
            }
            let avail = self.availability(m.machine_id);
            if best.is_none_or(|(b, _)| avail < b) {
                best = Some((avail, m.machine_id));
            }
        }
        best.map(|(_, id)| id)
    }

    /// Starts the head of the local queue on every idle machine, in machine
    /// order. `duration` supplies how long each started task will really run.
    pub fn start_idle<F>(&mut self, mut duration: F) -> Vec<Assignment>
    where
        F: FnMut(&QueuedTask) -> f64,
    {
        let now = self.now;
        let mut started = Vec::new();
        for m in self.machines.iter_mut() {
            if m.running.is_some() {
                continue;
            }
            let Some(id) = m.local_queue.pop_front() else {
                continue;
            };
            let task = self.tasks.get_mut(&id).expect("queued task is live");
            task.state = TaskState::Executing(m.machine_id);
            let actual = duration(task);
            m.running = Some(Running {
                task: id,
                started_at: now,
                est_duration: task.pessimistic_duration(),
                end_at: now + actual,
            });
            started.push(Assignment {
                task: id,
                machine: m.machine_id,
            });
        }
        started
    }

    /// Alternates dispatching and starting until neither changes anything.
    pub fn settle<F>(&mut self, policy: SchedulingPolicy, mut duration: F)
    where
        F: FnMut(&QueuedTask) -> f64,
    {
        loop {
            let assigned = self.dispatch(policy);
            let started = self.start_idle(&mut duration);
            if assigned.is_empty() && started.is_empty() {
                break;
            }
        }
    }

    /// No machine sits idle, and no local queue has room, while batch work
    /// is waiting.
    pub fn is_work_conserving(&self) -> bool {
        let stalled_machine = self
            .machines
            .iter()
            .any(|m| m.is_idle() && !m.local_queue.is_empty());
        let waiting_room = !self.batch.is_empty() && self.any_room();
        !stalled_machine && !waiting_room
    }
}
