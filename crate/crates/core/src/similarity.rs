//! Three-level hash-table detector for mergeable requests.
//!
//! Each table maps the key of one mergeability level to the live task that
//! currently owns it. An arriving request is probed against the task-level
//! table first, then operation-level, then data-level, so detection costs at
//! most three hash probes no matter how long the queues are.
//!
//! Table maintenance follows four arrival cases plus a completion rule:
//!
//! 1. task-level merge: tables untouched;
//! 2. operation/data-level merge: the incoming request's keys are added and
//!    point at the merged unit (keys already present keep their binding);
//! 3. a match that admission rejected: the incoming task's keys overwrite the
//!    old bindings, so future arrivals are steered to the newest task;
//! 4. no match: the incoming task's keys are inserted;
//! 5. completion: every entry owned by the finished task is dropped.
//!
//! A reverse `owners` index makes step 5 proportional to the entries owned.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Result, SimError};
use crate::task::{MergeLevel, QueuedTask, TaskId, TaskRequest, TaskState};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MergeKey {
    pub level: MergeLevel,
    pub key: String,
}

/// Sorted `key=value` pairs joined by `,`.
pub fn canonical_params(params: &[String]) -> String {
    let mut sorted: Vec<&str> = params.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    sorted.join(",")
}

/// Keys of `req` in probe order: task, operation, data.
pub fn merge_keys(req: &TaskRequest) -> [MergeKey; 3] {
    let data = format!("{}|{}", req.video_id, req.gop_index);
    let operation = format!("{data}|{}", req.operation);
    let task = format!("{operation}|{}", canonical_params(&req.params));
    [
        MergeKey {
            level: MergeLevel::TaskLevel,
            key: task,
        },
        MergeKey {
            level: MergeLevel::OperationLevel,
            key: operation,
        },
        MergeKey {
            level: MergeLevel::DataLevel,
            key: data,
        },
    ]
}

fn slot(level: MergeLevel) -> usize {
    match level {
        MergeLevel::TaskLevel => 0,
        MergeLevel::OperationLevel => 1,
        MergeLevel::DataLevel => 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Binding {
    task: TaskId,
    /// Set when a rejected merge overwrote a binding to another task. The
    /// older task may still be queued with the same key.
    redirected: bool,
}

/// A detected merge candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub task: TaskId,
    pub level: MergeLevel,
    /// The binding came from a redirection, so another live task may tie.
    pub redirected: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityIndex {
    tables: [HashMap<String, Binding>; 3],
    owners: HashMap<TaskId, Vec<MergeKey>>,
}

impl SimilarityIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// First mergeable task bound to one of `req`'s keys, most specific level
    /// first. Tasks for which `state_of` reports anything but a queued state
    /// are skipped and probing continues with the next level.
    pub fn lookup<F>(&self, req: &TaskRequest, state_of: F) -> Option<Match>
    where
        F: Fn(TaskId) -> Option<TaskState>,
    {
        self.lookup_counted(req, state_of).0
    }

    /// Like [`lookup`](Self::lookup), also returning the number of hash probes.
    pub fn lookup_counted<F>(&self, req: &TaskRequest, state_of: F) -> (Option<Match>, usize)
    where
        F: Fn(TaskId) -> Option<TaskState>,
    {
        let mut probes = 0;
        for key in merge_keys(req) {
            probes += 1;
            if let Some(b) = self.tables[slot(key.level)].get(&key.key) {
                if state_of(b.task).is_some_and(TaskState::is_mergeable) {
                    let hit = Match {
                        task: b.task,
                        level: key.level,
                        redirected: b.redirected,
                    };
                    return (Some(hit), probes);
                }
            }
        }
        (None, probes)
    }

    /// Table update after `incoming` was merged into `existing` at `level`.
    pub fn on_arrival_merged(
        &mut self,
        existing: &QueuedTask,
        incoming: &TaskRequest,
        level: MergeLevel,
    ) -> Result<()> {
        if existing.state == TaskState::Done {
            return Err(SimError::consistency(
                existing.id(),
                "merge target has already completed",
            ));
        }
        if level == MergeLevel::TaskLevel {
            return Ok(());
        }
        let owner = existing.id();
        for key in merge_keys(incoming) {
            let table = &mut self.tables[slot(key.level)];
            if table.contains_key(&key.key) {
                continue;
            }
            table.insert(
                key.key.clone(),
                Binding {
                    task: owner,
                    redirected: false,
                },
            );
            self.owners.entry(owner).or_default().push(key);
        }
        Ok(())
    }

    /// Table update after `incoming` was enqueued as its own task. Existing
    /// bindings for its keys are overwritten.
    pub fn on_arrival_unmerged(&mut self, incoming: &QueuedTask, had_match: bool) {
        let owner = incoming.id();
        for key in merge_keys(&incoming.root) {
            let previous = self.tables[slot(key.level)].insert(
                key.key.clone(),
                Binding {
                    task: owner,
                    redirected: false,
                },
            );
            if let Some(prev) = previous {
                if prev.task != owner {
                    self.disown(prev.task, &key);
                    if had_match {
                        if let Some(b) = self.tables[slot(key.level)].get_mut(&key.key) {
                            b.redirected = true;
                        }
                    }
                } else {
                    continue;
                }
            }
            self.owners.entry(owner).or_default().push(key);
        }
    }

    /// Drops every entry owned by a completed task.
    pub fn on_complete(&mut self, task: &QueuedTask) -> Result<()> {
        if task.state != TaskState::Done {
            return Err(SimError::consistency(
                task.id(),
                "index cleanup requested for a task that has not completed",
            ));
        }
        self.remove_owner(task.id());
        Ok(())
    }

    pub(crate) fn remove_owner(&mut self, task: TaskId) {
        if let Some(keys) = self.owners.remove(&task) {
            for key in keys {
                let removed = self.tables[slot(key.level)].remove(&key.key);
                debug_assert_eq!(removed.map(|b| b.task), Some(task));
            }
        }
    }

    fn disown(&mut self, task: TaskId, key: &MergeKey) {
        if let Some(list) = self.owners.get_mut(&task) {
            list.retain(|k| k != key);
            if list.is_empty() {
                self.owners.remove(&task);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tables.iter().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Owned entry count for `task`.
    pub fn owned_by(&self, task: TaskId) -> usize {
        self.owners.get(&task).map_or(0, Vec::len)
    }

    /// The task bound to `key`, if any.
    pub fn binding(&self, key: &MergeKey) -> Option<TaskId> {
        self.tables[slot(key.level)].get(&key.key).map(|b| b.task)
    }

    /// All entries sorted by (level, key).
    pub fn entries(&self) -> Vec<(MergeKey, TaskId)> {
        let mut out: Vec<(MergeKey, TaskId)> = MergeLevel::PROBE_ORDER
            .into_iter()
            .flat_map(|level| {
                self.tables[slot(level)].iter().map(move |(k, b)| {
                    (
                        MergeKey {
                            level,
                            key: k.clone(),
                        },
                        b.task,
                    )
                })
            })
            .collect();
        out.sort();
        out
    }

    pub fn key_set(&self) -> BTreeSet<MergeKey> {
        self.entries().into_iter().map(|(k, _)| k).collect()
    }

    /// Deterministic text rendering of the tables, one `level<TAB>key<TAB>task`
    /// line per entry.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, task) in self.entries() {
            let _ = writeln!(out, "{}\t{}\t{}", key.level, key.key, task.0);
        }
        out
    }

    /// Verifies that `owners` inverts the tables exactly and that no entry
    /// points at a completed or unknown task.
    pub fn check_consistency<F>(&self, state_of: F) -> std::result::Result<(), String>
    where
        F: Fn(TaskId) -> Option<TaskState>,
    {
        let mut owned = 0;
        for (task, keys) in &self.owners {
            for key in keys {
                owned += 1;
                match self.tables[slot(key.level)].get(&key.key) {
                    Some(b) if b.task == *task => {}
                    other => {
                        return Err(format!(
                            "owner {task} lists {}:{} but table binds {:?}",
                            key.level,
                            key.key,
                            other.map(|b| b.task)
                        ))
                    }
                }
            }
        }
        if owned != self.len() {
            return Err(format!("{} table entries but {owned} owned", self.len()));
        }
        for table in &self.tables {
            for (key, b) in table {
                match state_of(b.task) {
                    None | Some(TaskState::Done) => {
                        return Err(format!("{key} points at dead task {}", b.task))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::tests::request;
    use crate::task::{MergeCostFactors, OperationKind::*};
    use std::collections::HashMap as Map;

    struct World {
        index: SimilarityIndex,
        tasks: Map<TaskId, QueuedTask>,
    }

    impl World {
        fn new() -> Self {
            World {
                index: SimilarityIndex::new(),
                tasks: Map::new(),
            }
        }

        fn state(&self) -> impl Fn(TaskId) -> Option<TaskState> + '_ {
            |id| self.tasks.get(&id).map(|t| t.state)
        }

        fn lookup(&self, r: &TaskRequest) -> Option<Match> {
            self.index.lookup(r, self.state())
        }

        fn enqueue(&mut self, r: TaskRequest, had_match: bool) -> TaskId {
            let t = QueuedTask::new(r);
            self.index.on_arrival_unmerged(&t, had_match);
            let id = t.id();
            self.tasks.insert(id, t);
            id
        }

        fn merge(&mut self, into: TaskId, r: TaskRequest, level: MergeLevel) {
            let t = self.tasks.get_mut(&into).unwrap();
            t.merge(r.clone(), level, &MergeCostFactors::default());
            self.index.on_arrival_merged(t, &r, level).unwrap();
        }

        fn complete(&mut self, id: TaskId) {
            let t = self.tasks.get_mut(&id).unwrap();
            t.state = TaskState::Done;
            self.index.on_complete(t).unwrap();
            self.tasks.remove(&id);
        }
    }

    #[test]
    fn key_construction() {
        let r = request(1, "v7", 3, ChangeCodec, &["codec=hevc", "b=2"]);
        let [t, o, d] = merge_keys(&r);
        assert_eq!(t.key, "v7|3|change_codec|b=2,codec=hevc");
        assert_eq!(o.key, "v7|3|change_codec");
        assert_eq!(d.key, "v7|3");
        let reordered = request(2, "v7", 3, ChangeCodec, &["b=2", "codec=hevc"]);
        assert_eq!(merge_keys(&reordered)[0], t);
    }

    #[test]
    fn lookup_levels() {
        let mut w = World::new();
        assert_eq!(
            w.lookup(&request(9, "v", 0, ChangeCodec, &["codec=hevc"])),
            None
        );
        w.enqueue(request(1, "v", 0, ChangeCodec, &["codec=hevc"]), false);

        let same = w
            .lookup(&request(2, "v", 0, ChangeCodec, &["codec=hevc"]))
            .unwrap();
        assert_eq!((same.task, same.level), (TaskId(1), MergeLevel::TaskLevel));
        let op = w
            .lookup(&request(3, "v", 0, ChangeCodec, &["codec=vp9"]))
            .unwrap();
        assert_eq!(op.level, MergeLevel::OperationLevel);
        let data = w
            .lookup(&request(4, "v", 0, AdjustBitRate, &["bitrate=1M"]))
            .unwrap();
        assert_eq!(data.level, MergeLevel::DataLevel);
        assert_eq!(
            w.lookup(&request(5, "v", 1, ChangeCodec, &["codec=hevc"])),
            None
        );
    }

    #[test]
    fn executing_tasks_are_skipped() {
        let mut w = World::new();
        w.enqueue(request(1, "v", 0, ChangeCodec, &["codec=hevc"]), false);
        w.tasks.get_mut(&TaskId(1)).unwrap().state = TaskState::Executing(0);
        let (hit, probes) = w
            .index
            .lookup_counted(&request(2, "v", 0, ChangeCodec, &["codec=hevc"]), w.state());
        assert_eq!(hit, None);
        assert_eq!(probes, 3);
    }

    #[test]
    fn task_level_merge_leaves_tables_untouched() {
        let mut w = World::new();
        w.enqueue(request(1, "v", 0, ChangeCodec, &["codec=hevc"]), false);
        let before = w.index.render();
        w.merge(
            TaskId(1),
            request(2, "v", 0, ChangeCodec, &["codec=hevc"]),
            MergeLevel::TaskLevel,
        );
        assert_eq!(w.index.render(), before);
    }

    #[test]
    fn operation_merge_points_new_keys_at_unit() {
        let mut w = World::new();
        w.enqueue(request(1, "v", 0, ChangeCodec, &["codec=hevc"]), false);
        let j = request(2, "v", 0, ChangeCodec, &["codec=vp9"]);
        w.merge(TaskId(1), j.clone(), MergeLevel::OperationLevel);
        for key in merge_keys(&j) {
            assert_eq!(w.index.binding(&key), Some(TaskId(1)));
        }
        assert_eq!(w.index.owned_by(TaskId(1)), 4);
        w.index.check_consistency(w.state()).unwrap();
    }

    #[test]
    fn rejected_match_redirects() {
        let mut w = World::new();
        w.enqueue(request(1, "v", 0, ChangeCodec, &["codec=hevc"]), false);
        w.enqueue(request(2, "v", 0, ChangeCodec, &["codec=hevc"]), true);
        let hit = w
            .lookup(&request(3, "v", 0, ChangeCodec, &["codec=hevc"]))
            .unwrap();
        assert_eq!(hit.task, TaskId(2));
        assert!(hit.redirected);
        assert_eq!(w.index.owned_by(TaskId(1)), 0);
        w.enqueue(request(3, "v", 0, ChangeCodec, &["codec=hevc"]), true);
        assert_eq!(
            w.lookup(&request(4, "v", 0, ChangeCodec, &["codec=hevc"]))
                .unwrap()
                .task,
            TaskId(3)
        );
        w.index.check_consistency(w.state()).unwrap();
    }

    #[test]
    fn completion_removes_owned_entries() {
        let mut w = World::new();
        w.enqueue(request(1, "v", 0, ChangeCodec, &["codec=hevc"]), false);
        w.enqueue(
            request(2, "w", 5, ReduceResolution, &["res=640x360"]),
            false,
        );
        w.merge(
            TaskId(1),
            request(3, "v", 0, AdjustBitRate, &["bitrate=1M"]),
            MergeLevel::DataLevel,
        );
        assert_eq!(w.index.owned_by(TaskId(1)), 5);
        w.complete(TaskId(1));
        assert_eq!(w.index.len(), 3);
        assert_eq!(
            w.lookup(&request(4, "v", 0, ChangeCodec, &["codec=hevc"])),
            None
        );
        w.index.check_consistency(w.state()).unwrap();
    }

    #[test]
    fn cleanup_of_live_task_is_a_fault() {
        let t = QueuedTask::new(request(1, "v", 0, ChangeCodec, &["codec=hevc"]));
        let mut index = SimilarityIndex::new();
        assert!(matches!(
            index.on_complete(&t),
            Err(SimError::Consistency { .. })
        ));
        let mut done = t.clone();
        done.state = TaskState::Done;
        let r = request(2, "v", 0, ChangeCodec, &["codec=vp9"]);
        assert!(index
            .on_arrival_merged(&done, &r, MergeLevel::OperationLevel)
            .is_err());
    }
}
