//! Replicated experiments: policy × task-count sweeps with merging off and
//! on, aggregated into means with 95% confidence intervals.
//!
//! Every replication generates one trace (seed `base_seed + replication`)
//! and runs it under each policy twice, once without and once with merging,
//! so on/off comparisons are paired.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::{run, SimConfig};
use crate::error::{Result, SimError};
use crate::metrics::{AuditEvent, MergeCounts, RunMetrics};
use crate::scheduling::SchedulingPolicy;
use crate::task::{MergeCostFactors, TaskRequest};
use crate::workload::{generate, WorkloadSpec};

/// Version of the sweep configuration file format.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub schema_version: u32,
    pub policies: Vec<SchedulingPolicy>,
    pub task_counts: Vec<usize>,
    pub replications: usize,
    pub base_seed: u64,
    pub machines: usize,
    pub local_queue_capacity: usize,
    pub merge_factors: MergeCostFactors,
    pub exec_noise: bool,
    /// Keep per-run audit logs.
    pub audit: bool,
    /// `task_count` and `seed` are overridden per cell and replication.
    pub workload: WorkloadSpec,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            schema_version: SCHEMA_VERSION,
            policies: SchedulingPolicy::ALL.to_vec(),
            task_counts: vec![200, 230, 260, 290, 320],
            replications: 30,
            base_seed: 1,
            machines: 8,
            local_queue_capacity: 1,
            merge_factors: MergeCostFactors::default(),
            exec_noise: true,
            audit: false,
            workload: WorkloadSpec::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SimError::InvalidConfig(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.policies.is_empty() || self.task_counts.is_empty() {
            return Err(SimError::InvalidConfig(
                "policies and task_counts must be non-empty".into(),
            ));
        }
        if self.replications == 0 {
            return Err(SimError::InvalidConfig("replications must be >= 1".into()));
        }
        self.sim_config(SchedulingPolicy::Fcfs, false, 0)
            .validate()?;
        self.workload.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SweepConfig =
            toml::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("sweep config serializes")
    }

    pub fn seed(&self, replication: usize) -> u64 {
        self.base_seed.wrapping_add(replication as u64)
    }

    pub fn sim_config(&self, policy: SchedulingPolicy, merge: bool, seed: u64) -> SimConfig {
        SimConfig {
            machines: self.machines,
            local_queue_capacity: self.local_queue_capacity,
            policy,
            merge_enabled: merge,
            merge_factors: self.merge_factors,
            rng_seed: seed,
            exec_noise: self.exec_noise,
            audit: self.audit,
        }
    }

    pub fn trace(&self, task_count: usize, replication: usize) -> Result<Vec<TaskRequest>> {
        generate(&WorkloadSpec {
            task_count,
            seed: self.seed(replication),
            ..self.workload.clone()
        })
    }
}

/// One simulation inside a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub policy: SchedulingPolicy,
    pub task_count: usize,
    pub replication: usize,
    pub seed: u64,
    pub merging: bool,
    pub requests: usize,
    pub late: usize,
    pub deadline_miss_rate: f64,
    pub makespan: f64,
    pub merges: MergeCounts,
    pub merge_rejections: usize,
    pub safety_violations: usize,
    #[serde(skip)]
    pub audit: Option<Vec<AuditEvent>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub ci95_half_width: f64,
}

impl Stat {
    /// Mean and t-based 95% confidence half-width; zero width for n < 2.
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat {
                mean: 0.0,
                ci95_half_width: 0.0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Stat {
                mean,
                ci95_half_width: 0.0,
            };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        Stat {
            mean,
            ci95_half_width: t * var.sqrt() / (n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub policy: SchedulingPolicy,
    pub merging: bool,
    pub task_count: usize,
    pub replications: usize,
    pub dmr: Stat,
    pub makespan: Stat,
    pub merged_requests: Stat,
}

/// Paired merging-off vs merging-on means for one (policy, task count).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub policy: SchedulingPolicy,
    pub task_count: usize,
    pub makespan_off: f64,
    pub makespan_on: f64,
    /// `(off - on) / off` in percent.
    pub makespan_saving_pct: f64,
    pub dmr_off: f64,
    pub dmr_on: f64,
    /// `dmr_off - dmr_on`.
    pub dmr_improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunRecord>,
}

impl SweepResult {
    pub fn cell(
        &self,
        policy: SchedulingPolicy,
        merging: bool,
        task_count: usize,
    ) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.policy == policy && c.merging == merging && c.task_count == task_count)
    }

    pub fn comparisons(&self) -> Vec<Comparison> {
        let mut out = Vec::new();
        for &policy in &self.config.policies {
            for &task_count in &self.config.task_counts {
                let (Some(off), Some(on)) = (
                    self.cell(policy, false, task_count),
                    self.cell(policy, true, task_count),
                ) else {
                    continue;
                };
                let saving = if off.makespan.mean > 0.0 {
                    100.0 * (off.makespan.mean - on.makespan.mean) / off.makespan.mean
                } else {
                    0.0
                };
                out.push(Comparison {
                    policy,
                    task_count,
                    makespan_off: off.makespan.mean,
                    makespan_on: on.makespan.mean,
                    makespan_saving_pct: saving,
                    dmr_off: off.dmr.mean,
                    dmr_on: on.dmr.mean,
                    dmr_improvement: off.dmr.mean - on.dmr.mean,
                });
            }
        }
        out
    }

    /// Records of one cell ordered by replication.
    pub fn cell_runs(
        &self,
        policy: SchedulingPolicy,
        merging: bool,
        task_count: usize,
    ) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(move |r| {
            r.policy == policy && r.merging == merging && r.task_count == task_count
        })
    }
}

fn record(
    policy: SchedulingPolicy,
    task_count: usize,
    replication: usize,
    seed: u64,
    merging: bool,
    m: RunMetrics,
) -> RunRecord {
    RunRecord {
        policy,
        task_count,
        replication,
        seed,
        merging,
        requests: m.requests,
        late: m.late,
        deadline_miss_rate: m.deadline_miss_rate,
        makespan: m.makespan,
        merges: m.merges,
        merge_rejections: m.merge_rejections,
        safety_violations: m.safety_violations,
        audit: m.audit,
    }
}

/// Runs the full sweep. Replications run in parallel; records are sorted
/// into a fixed order afterwards.
pub fn run_experiment(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = config
        .task_counts
        .iter()
        .flat_map(|&count| (0..config.replications).map(move |rep| (count, rep)))
        .collect();

    let batches: Vec<Vec<RunRecord>> = jobs
        .par_iter()
        .map(|&(count, rep)| -> Result<Vec<RunRecord>> {
            let seed = config.seed(rep);
            let fail = |policy: SchedulingPolicy, e: SimError| SimError::Sweep {
                policy: policy.to_string(),
                task_count: count,
                seed,
                source: Box::new(e),
            };
            let trace = config
                .trace(count, rep)
                .map_err(|e| fail(config.policies[0], e))?;
            let mut out = Vec::with_capacity(config.policies.len() * 2);
            for &policy in &config.policies {
                for merging in [false, true] {
                    let m = run(&trace, &config.sim_config(policy, merging, seed))
                        .map_err(|e| fail(policy, e))?;
                    out.push(record(policy, count, rep, seed, merging, m));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut runs: Vec<RunRecord> = batches.into_iter().flatten().collect();
    let policy_rank = |p: SchedulingPolicy| config.policies.iter().position(|q| *q == p);
    let count_rank = |c: usize| config.task_counts.iter().position(|q| *q == c);
    runs.sort_by_key(|r| {
        (
            policy_rank(r.policy),
            count_rank(r.task_count),
            r.merging,
            r.replication,
        )
    });

    let mut cells = Vec::new();
    for &policy in &config.policies {
        for &task_count in &config.task_counts {
            for merging in [false, true] {
                let sel: Vec<&RunRecord> = runs
                    .iter()
                    .filter(|r| {
                        r.policy == policy && r.task_count == task_count && r.merging == merging
                    })
                    .collect();
                let col = |f: fn(&RunRecord) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<f64>>();
                cells.push(CellSummary {
                    policy,
                    merging,
                    task_count,
                    replications: sel.len(),
                    dmr: Stat::of(&col(|r| r.deadline_miss_rate)),
                    makespan: Stat::of(&col(|r| r.makespan)),
                    merged_requests: Stat::of(&col(|r| r.merges.total() as f64)),
                });
            }
        }
    }
    Ok(SweepResult {
        config: config.clone(),
        cells,
        runs,
    })
}

/// Files written by [`emit`].
#[derive(Debug, Clone)]
pub struct EmittedFiles {
    pub cells_csv: PathBuf,
    pub runs_csv: PathBuf,
    pub summary_json: PathBuf,
    pub audit_logs: Vec<PathBuf>,
}

pub const CELL_METRICS: [&str; 3] = ["dmr", "makespan", "merged_requests"];

fn on_off(merging: bool) -> &'static str {
    if merging {
        "on"
    } else {
        "off"
    }
}

fn csv_err(path: &Path, e: csv::Error) -> SimError {
    SimError::Output(format!("{}: {e}", path.display()))
}

/// Writes `cells.csv` (one row per cell and metric), `runs.csv` (one row per
/// simulation), `summary.json`, and an `audit/` directory of JSON Lines logs
/// when audit trails were kept.
pub fn emit(result: &SweepResult, out_dir: impl AsRef<Path>) -> Result<EmittedFiles> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;

    let cells_csv = dir.join("cells.csv");
    let mut w = csv::Writer::from_path(&cells_csv).map_err(|e| csv_err(&cells_csv, e))?;
    w.write_record([
        "policy",
        "merging",
        "task_count",
        "metric",
        "replications",
        "mean",
        "ci95_half_width",
    ])
    .map_err(|e| csv_err(&cells_csv, e))?;
    for c in &result.cells {
        for (metric, stat) in CELL_METRICS
            .iter()
            .zip([c.dmr, c.makespan, c.merged_requests])
        {
            w.write_record([
                c.policy.as_str(),
                on_off(c.merging),
                &c.task_count.to_string(),
                metric,
                &c.replications.to_string(),
                &stat.mean.to_string(),
                &stat.ci95_half_width.to_string(),
            ])
            .map_err(|e| csv_err(&cells_csv, e))?;
        }
    }
    w.flush().map_err(|e| SimError::io(&cells_csv, e))?;

    let runs_csv = dir.join("runs.csv");
    let mut w = csv::Writer::from_path(&runs_csv).map_err(|e| csv_err(&runs_csv, e))?;
    w.write_record([
        "policy",
        "task_count",
        "replication",
        "seed",
        "merging",
        "requests",
        "late",
        "dmr",
        "makespan",
        "merges_task",
        "merges_operation",
        "merges_data",
        "merge_rejections",
    ])
    .map_err(|e| csv_err(&runs_csv, e))?;
    for r in &result.runs {
        w.write_record([
            r.policy.as_str().to_string(),
            r.task_count.to_string(),
            r.replication.to_string(),
            r.seed.to_string(),
            on_off(r.merging).to_string(),
            r.requests.to_string(),
            r.late.to_string(),
            r.deadline_miss_rate.to_string(),
            r.makespan.to_string(),
            r.merges.task.to_string(),
            r.merges.operation.to_string(),
            r.merges.data.to_string(),
            r.merge_rejections.to_string(),
        ])
        .map_err(|e| csv_err(&runs_csv, e))?;
    }
    w.flush().map_err(|e| SimError::io(&runs_csv, e))?;

    #[derive(Serialize)]
    struct Summary<'a> {
        schema_version: u32,
        config: &'a SweepConfig,
        cells: &'a [CellSummary],
        comparisons: Vec<Comparison>,
    }
    let summary_json = dir.join("summary.json");
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        config: &result.config,
        cells: &result.cells,
        comparisons: result.comparisons(),
    };
    let text =
        serde_json::to_string_pretty(&summary).map_err(|e| SimError::Output(e.to_string()))?;
    fs::write(&summary_json, text + "\n").map_err(|e| SimError::io(&summary_json, e))?;

    let mut audit_logs = Vec::new();
    if result.runs.iter().any(|r| r.audit.is_some()) {
        let audit_dir = dir.join("audit");
        fs::create_dir_all(&audit_dir).map_err(|e| SimError::io(&audit_dir, e))?;
        for r in &result.runs {
            let Some(events) = &r.audit else { continue };
            let path = audit_dir.join(format!(
                "{}_{}_{:03}_{}.jsonl",
                r.policy,
                r.task_count,
                r.replication,
                on_off(r.merging)
            ));
            write_audit(events, &path)?;
            audit_logs.push(path);
        }
    }

    Ok(EmittedFiles {
        cells_csv,
        runs_csv,
        summary_json,
        audit_logs,
    })
}

/// Writes an audit trail as JSON Lines.
pub fn write_audit(events: &[AuditEvent], path: &Path) -> Result<()> {
    let mut text = String::new();
    for e in events {
        text.push_str(&serde_json::to_string(e).map_err(|e| SimError::Output(e.to_string()))?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| SimError::io(path, e))
}
