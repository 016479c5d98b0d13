//! Synthetic GOP-task traces and the trace file format.
//!
//! A trace is UTF-8 JSON Lines: one request object per line with the fields
//! of [`TaskRequest`]. Blank lines and lines starting with `#` are ignored.
//!
//! ```text
//! {"request_id":0,"video_id":"video0003","gop_index":12,"operation":"change_codec","params":["codec=hevc"],"arrival_time":0.51,"deadline":41.2,"exec_mean":3.9,"exec_std":0.31}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Result, SimError};
use crate::task::{ExecEstimate, OperationKind, TaskRequest};

/// (video index, gop, operation, params)
type Signature = (usize, u32, OperationKind, Arc<[String]>);

/// Parameter key and its value choices for each operation.
fn param_choices(op: OperationKind) -> (&'static str, &'static [&'static str]) {
    match op {
        OperationKind::ReduceResolution => {
            ("resolution", &["1280x720", "854x480", "640x360", "426x240"])
        }
        OperationKind::ChangeCodec => ("codec", &["h264", "hevc", "vp9", "av1"]),
        OperationKind::AdjustBitRate => ("bitrate", &["500k", "1000k", "2000k", "4000k"]),
        OperationKind::ChangeFrameRate => ("fps", &["15", "24", "30", "60"]),
    }
}

/// Uniform range of per-signature execution means and standard deviations,
/// in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecProfile {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

/// Knobs of the synthetic workload. The execution-time defaults are synthetic
/// placeholders, not measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub task_count: usize,
    /// Arrivals are uniform over `[0, arrival_window]`.
    pub arrival_window: f64,
    pub video_count: usize,
    pub gops_per_video: [u32; 2],
    pub video_duration: [f64; 2],
    pub exec: BTreeMap<OperationKind, ExecProfile>,
    /// Chance that a request repeats an earlier request's GOP.
    pub duplicate_prob: f64,
    /// Given a repeat, chance it is identical to the earlier request.
    pub same_params_prob: f64,
    /// Given a non-identical repeat, chance it also switches operation.
    pub op_change_prob: f64,
    /// Playback start delay added to every deadline.
    pub startup_delay: f64,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        let profile = |lo: f64, hi: f64| ExecProfile {
            mean: [lo, hi],
            std: [0.05 * lo, 0.1 * hi],
        };
        let exec = BTreeMap::from([
            (OperationKind::ReduceResolution, profile(2.0, 4.0)),
            (OperationKind::ChangeCodec, profile(3.0, 6.0)),
            (OperationKind::AdjustBitRate, profile(2.0, 4.5)),
            (OperationKind::ChangeFrameRate, profile(1.5, 3.5)),
        ]);
        WorkloadSpec {
            task_count: 250,
            arrival_window: 45.0,
            video_count: 120,
            gops_per_video: [10, 110],
            video_duration: [10.0, 120.0],
            exec,
            duplicate_prob: 0.35,
            same_params_prob: 0.5,
            op_change_prob: 0.3,
            startup_delay: 4.0,
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] >= min && r[0] <= r[1]) {
        return Err(SimError::InvalidSpec(format!(
            "{name} range {r:?} must satisfy {min} <= lo <= hi"
        )));
    }
    Ok(())
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("duplicate_prob", self.duplicate_prob),
            ("same_params_prob", self.same_params_prob),
            ("op_change_prob", self.op_change_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::InvalidSpec(format!(
                    "{name} {p} must lie in [0, 1]"
                )));
            }
        }
        if !(self.arrival_window.is_finite() && self.arrival_window >= 0.0) {
            return Err(SimError::InvalidSpec(
                "arrival_window must be finite and >= 0".into(),
            ));
        }
        if !(self.startup_delay.is_finite() && self.startup_delay >= 0.0) {
            return Err(SimError::InvalidSpec(
                "startup_delay must be finite and >= 0".into(),
            ));
        }
        if self.video_count == 0 && self.task_count > 0 {
            return Err(SimError::InvalidSpec("video_count must be >= 1".into()));
        }
        let [glo, ghi] = self.gops_per_video;
        if glo == 0 || glo > ghi {
            return Err(SimError::InvalidSpec(format!(
                "gops_per_video range {:?} must satisfy 1 <= lo <= hi",
                self.gops_per_video
            )));
        }
        check_range("video_duration", self.video_duration, f64::MIN_POSITIVE)?;
        for op in OperationKind::ALL {
            let p = self
                .exec
                .get(&op)
                .ok_or_else(|| SimError::InvalidSpec(format!("missing exec profile for {op}")))?;
            check_range(&format!("{op} exec mean"), p.mean, f64::MIN_POSITIVE)?;
            check_range(&format!("{op} exec std"), p.std, 0.0)?;
        }
        Ok(())
    }
}

struct Video {
    id: Arc<str>,
    gop_duration: f64,
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn random_params<R: Rng>(rng: &mut R, op: OperationKind, avoid: Option<&str>) -> Arc<[String]> {
    let (key, values) = param_choices(op);
    let pool: Vec<&str> = values
        .iter()
        .copied()
        .filter(|v| Some(*v) != avoid)
        .collect();
    let value = pool.choose(rng).expect("at least one choice remains");
    Arc::from(vec![format!("{key}={value}")])
}

fn param_value(params: &[String]) -> Option<&str> {
    params
        .first()
        .and_then(|p| p.split_once('='))
        .map(|(_, v)| v)
}

/// Generates `spec.task_count` requests sorted by arrival, with ids in
/// arrival order.
///
/// A request either repeats a uniformly chosen earlier request's GOP (with
/// probability `duplicate_prob`) or picks a GOP no earlier request touched.
/// A repeat is identical with probability `same_params_prob`; otherwise it
/// switches operation with probability `op_change_prob`, else it keeps the
/// operation and switches parameters. Requests with the same signature share
/// one execution estimate.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<TaskRequest>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.task_count;
    if n == 0 {
        return Ok(Vec::new());
    }

    let mut videos = Vec::with_capacity(spec.video_count);
    let mut fresh_gops: Vec<(usize, u32)> = Vec::new();
    for v in 0..spec.video_count {
        let [glo, ghi] = spec.gops_per_video;
        let gops = rng.random_range(glo..=ghi);
        let duration = uniform(&mut rng, spec.video_duration);
        videos.push(Video {
            id: format!("video{v:04}").into(),
            gop_duration: duration / f64::from(gops),
        });
        fresh_gops.extend((0..gops).map(|g| (v, g)));
    }

    let mut arrivals: Vec<f64> = (0..n)
        .map(|_| uniform(&mut rng, [0.0, spec.arrival_window]))
        .collect();
    arrivals.sort_by(f64::total_cmp);

    let mut estimates: HashMap<Signature, ExecEstimate> = HashMap::new();
    // (video index, gop) for every request already emitted
    let mut origin: Vec<(usize, u32)> = Vec::with_capacity(n);
    let mut fresh_used = 0usize;
    let mut out: Vec<TaskRequest> = Vec::with_capacity(n);

    for (i, &arrival) in arrivals.iter().enumerate() {
        let (video, gop, operation, params) = if i > 0 && rng.random_bool(spec.duplicate_prob) {
            let src = rng.random_range(0..i);
            let (video, gop) = origin[src];
            let src = &out[src];
            if rng.random_bool(spec.same_params_prob) {
                (video, gop, src.operation, src.params.clone())
            } else if rng.random_bool(spec.op_change_prob) {
                let others: Vec<OperationKind> = OperationKind::ALL
                    .into_iter()
                    .filter(|op| *op != src.operation)
                    .collect();
                let op = *others.choose(&mut rng).expect("three other operations");
                (video, gop, op, random_params(&mut rng, op, None))
            } else {
                let params = random_params(&mut rng, src.operation, param_value(&src.params));
                (video, gop, src.operation, params)
            }
        } else {
            if fresh_used == fresh_gops.len() {
                return Err(SimError::InvalidSpec(format!(
                    "ran out of distinct GOPs after {fresh_used} fresh requests; raise video_count"
                )));
            }
            let pick = rng.random_range(fresh_used..fresh_gops.len());
            fresh_gops.swap(fresh_used, pick);
            let (video, gop) = fresh_gops[fresh_used];
            fresh_used += 1;
            let op = *OperationKind::ALL.choose(&mut rng).expect("non-empty");
            (video, gop, op, random_params(&mut rng, op, None))
        };

        let profile = spec.exec[&operation];
        let est = *estimates
            .entry((video, gop, operation, params.clone()))
            .or_insert_with(|| {
                ExecEstimate::new(
                    uniform(&mut rng, profile.mean),
                    uniform(&mut rng, profile.std),
                )
            });
        let v = &videos[video];
        out.push(TaskRequest {
            request_id: i as u64,
            video_id: v.id.clone(),
            gop_index: gop,
            operation,
            params,
            arrival_time: arrival,
            deadline: arrival + spec.startup_delay + f64::from(gop) * v.gop_duration,
            exec_mean: est.mean,
            exec_std: est.std,
        });
        origin.push((video, gop));
    }
    Ok(out)
}

/// Writes `tasks` as JSON Lines.
pub fn write_trace_to<W: Write>(tasks: &[TaskRequest], mut w: W) -> std::io::Result<()> {
    for t in tasks {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_trace(tasks: &[TaskRequest], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    write_trace_to(tasks, BufWriter::new(file)).map_err(|e| SimError::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TaskRequest>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SimError::io(path, e))?;
    read_trace_from(BufReader::new(file), path)
}

/// Parses a trace. `origin` only labels error messages.
pub fn read_trace_from<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<TaskRequest>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| SimError::io(origin, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let req = parse_record(trimmed).map_err(|(field, reason)| SimError::TraceParse {
            path: origin.to_path_buf(),
            line: line_no,
            field,
            reason,
        })?;
        if !seen.insert(req.request_id) {
            return Err(SimError::TraceDuplicate {
                path: origin.to_path_buf(),
                line: line_no,
                request_id: req.request_id,
            });
        }
        out.push(req);
    }
    Ok(out)
}

type FieldError = (String, String);

fn parse_record(line: &str) -> std::result::Result<TaskRequest, FieldError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| ("<record>".to_string(), e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(("<record>".into(), "expected a JSON object".into()));
    };
    let req = TaskRequest {
        request_id: u64_field(&obj, "request_id")?,
        video_id: str_field(&obj, "video_id")?.into(),
        gop_index: u32::try_from(u64_field(&obj, "gop_index")?)
            .map_err(|_| ("gop_index".to_string(), "out of range".to_string()))?,
        operation: str_field(&obj, "operation")?
            .parse()
            .map_err(|e: SimError| ("operation".to_string(), e.to_string()))?,
        params: params_field(&obj)?,
        arrival_time: f64_field(&obj, "arrival_time")?,
        deadline: f64_field(&obj, "deadline")?,
        exec_mean: f64_field(&obj, "exec_mean")?,
        exec_std: f64_field(&obj, "exec_std")?,
    };
    req.validate().map_err(|e| match e {
        SimError::InvalidRequest { field, reason, .. } => (field.to_string(), reason),
        other => ("<record>".to_string(), other.to_string()),
    })?;
    Ok(req)
}

fn field<'a>(
    obj: &'a Map<String, Value>,
    name: &str,
) -> std::result::Result<&'a Value, FieldError> {
    obj.get(name)
        .ok_or_else(|| (name.to_string(), "missing".to_string()))
}

fn u64_field(obj: &Map<String, Value>, name: &str) -> std::result::Result<u64, FieldError> {
    field(obj, name)?.as_u64().ok_or_else(|| {
        (
            name.to_string(),
            "expected a non-negative integer".to_string(),
        )
    })
}

fn f64_field(obj: &Map<String, Value>, name: &str) -> std::result::Result<f64, FieldError> {
    field(obj, name)?
        .as_f64()
        .ok_or_else(|| (name.to_string(), "expected a number".to_string()))
}

fn str_field<'a>(
    obj: &'a Map<String, Value>,
    name: &str,
) -> std::result::Result<&'a str, FieldError> {
    field(obj, name)?
        .as_str()
        .ok_or_else(|| (name.to_string(), "expected a string".to_string()))
}

fn params_field(obj: &Map<String, Value>) -> std::result::Result<Arc<[String]>, FieldError> {
    let bad = || {
        (
            "params".to_string(),
            "expected an array of key=value strings".to_string(),
        )
    };
    field(obj, "params")?
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or_else(bad))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::merge_keys;
    use std::io::Cursor;

    fn spec(n: usize) -> WorkloadSpec {
        WorkloadSpec {
            task_count: n,
            ..WorkloadSpec::default()
        }
    }

    #[test]
    fn zero_tasks() {
        assert!(generate(&spec(0)).unwrap().is_empty());
    }

    #[test]
    fn deterministic_and_sorted() {
        let a = generate(&WorkloadSpec {
            seed: 9,
            ..spec(400)
        })
        .unwrap();
        let b = generate(&WorkloadSpec {
            seed: 9,
            ..spec(400)
        })
        .unwrap();
        assert_eq!(a, b);
        let c = generate(&WorkloadSpec {
            seed: 10,
            ..spec(400)
        })
        .unwrap();
        assert_ne!(a, c);
        for (i, w) in a.windows(2).enumerate() {
            assert!(w[0].arrival_time <= w[1].arrival_time);
            assert_eq!(w[0].request_id, i as u64);
        }
        for r in &a {
            assert!(r.deadline >= r.arrival_time);
            r.validate().unwrap();
        }
    }

    #[test]
    fn no_duplication_means_no_shared_gop() {
        let t = generate(&WorkloadSpec {
            duplicate_prob: 0.0,
            ..spec(1500)
        })
        .unwrap();
        let data_keys: HashSet<String> = t.iter().map(|r| merge_keys(r)[2].key.clone()).collect();
        assert_eq!(data_keys.len(), t.len());
    }

    #[test]
    fn forced_duplication_yields_identical_tasks() {
        let t = generate(&WorkloadSpec {
            duplicate_prob: 1.0,
            same_params_prob: 1.0,
            video_count: 1,
            gops_per_video: [1, 1],
            ..spec(50)
        })
        .unwrap();
        let key = &merge_keys(&t[0])[0];
        assert!(t.iter().all(|r| &merge_keys(r)[0] == key));
        assert!(t
            .iter()
            .all(|r| r.exec_mean == t[0].exec_mean && r.exec_std == t[0].exec_std));
    }

    #[test]
    fn shared_signature_shares_estimate() {
        let t = generate(&WorkloadSpec {
            seed: 3,
            ..spec(800)
        })
        .unwrap();
        let mut by_key: HashMap<String, (f64, f64)> = HashMap::new();
        for r in &t {
            let k = merge_keys(r)[0].key.clone();
            let e = by_key.entry(k).or_insert((r.exec_mean, r.exec_std));
            assert_eq!(*e, (r.exec_mean, r.exec_std));
        }
        assert!(by_key.len() < t.len());
    }

    #[test]
    fn exhausted_gop_space_is_reported() {
        let err = generate(&WorkloadSpec {
            duplicate_prob: 0.0,
            video_count: 1,
            gops_per_video: [10, 10],
            ..spec(11)
        });
        assert!(matches!(err, Err(SimError::InvalidSpec(_))));
    }

    #[test]
    fn invalid_probability_is_rejected() {
        assert!(generate(&WorkloadSpec {
            duplicate_prob: 1.5,
            ..spec(5)
        })
        .is_err());
        let mut s = spec(5);
        s.exec.remove(&OperationKind::ChangeCodec);
        assert!(generate(&s).is_err());
    }

    #[test]
    fn empty_input_reads_as_empty_trace() {
        let t = read_trace_from(Cursor::new(""), Path::new("mem")).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn negative_mean_names_line_and_field() {
        let good = r#"{"request_id":1,"video_id":"v","gop_index":0,"operation":"change_codec","params":["codec=hevc"],"arrival_time":0,"deadline":5,"exec_mean":1,"exec_std":0}"#;
        let bad = good
            .replace(r#""request_id":1"#, r#""request_id":2"#)
            .replace(r#""exec_mean":1"#, r#""exec_mean":-1"#);
        let text = format!("# header\n{good}\n\n{bad}\n");
        match read_trace_from(Cursor::new(text), Path::new("t.jsonl")) {
            Err(SimError::TraceParse { line, field, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(field, "exec_mean");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_name_the_field() {
        let line = r#"{"request_id":1,"video_id":"v","gop_index":0,"operation":"blur","params":[],"arrival_time":0,"deadline":5,"exec_mean":1,"exec_std":0}"#;
        match read_trace_from(Cursor::new(line), Path::new("t")) {
            Err(SimError::TraceParse { line: 1, field, .. }) => assert_eq!(field, "operation"),
            other => panic!("unexpected {other:?}"),
        }
        let missing = r#"{"request_id":1}"#;
        match read_trace_from(Cursor::new(missing), Path::new("t")) {
            Err(SimError::TraceParse { field, .. }) => assert_eq!(field, "video_id"),
            other => panic!("unexpected {other:?}"),
        }
        match read_trace_from(Cursor::new("{not json"), Path::new("t")) {
            Err(SimError::TraceParse { field, .. }) => assert_eq!(field, "<record>"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let t = generate(&spec(3)).unwrap();
        let mut buf = Vec::new();
        write_trace_to(&[t[0].clone(), t[0].clone()], &mut buf).unwrap();
        assert!(matches!(
            read_trace_from(Cursor::new(buf), Path::new("t")),
            Err(SimError::TraceDuplicate {
                line: 2,
                request_id: 0,
                ..
            })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn trace_round_trips(seed in any::<u64>(), n in 0usize..200, dup in 0.0f64..1.0) {
                let t = generate(&WorkloadSpec { seed, duplicate_prob: dup, ..spec(n) }).unwrap();
                let mut buf = Vec::new();
                write_trace_to(&t, &mut buf).unwrap();
                let back = read_trace_from(Cursor::new(buf), Path::new("mem")).unwrap();
                prop_assert_eq!(back, t);
            }
        }
    }
}
