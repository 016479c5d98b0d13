//! C ABI for the taskmerge simulator.
//!
//! Fallible functions return a [`TmStatus`]. After a non-`TM_STATUS_OK`
//! result, [`tm_last_error_message`] describes the failure on the calling
//! thread. Traces are opaque handles released with [`tm_trace_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use taskmerge::{
    generate, merged_exec_estimate, read_trace, run, write_trace, ExecEstimate, MergeCostFactors,
    MergeLevel, SchedulingPolicy, SimConfig, SimError, TaskRequest, WorkloadSpec,
};

pub const TM_POLICY_FCFS: u32 = 0;
pub const TM_POLICY_EDF: u32 = 1;
pub const TM_POLICY_MU: u32 = 2;

pub const TM_MERGE_TASK: u32 = 0;
pub const TM_MERGE_OPERATION: u32 = 1;
pub const TM_MERGE_DATA: u32 = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Malformed, unsorted or duplicate requests in a trace.
    InvalidWorkload = 3,
    Io = 4,
    /// Internal consistency failure inside the simulator.
    Internal = 5,
    Panic = 6,
}

/// A loaded or generated trace.
pub struct TmTrace {
    requests: Vec<TaskRequest>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmWorkloadParams {
    pub task_count: usize,
    pub arrival_window: f64,
    pub video_count: usize,
    pub duplicate_prob: f64,
    pub same_params_prob: f64,
    pub op_change_prob: f64,
    pub startup_delay: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmSimConfig {
    pub machines: usize,
    pub local_queue_capacity: usize,
    /// One of the `TM_POLICY_*` constants.
    pub policy: u32,
    pub merge_enabled: bool,
    pub kappa_operation: f64,
    pub kappa_data: f64,
    pub rng_seed: u64,
    pub exec_noise: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TmRunMetrics {
    pub requests: usize,
    pub late: usize,
    pub deadline_miss_rate: f64,
    pub makespan: f64,
    pub merges_task: usize,
    pub merges_operation: usize,
    pub merges_data: usize,
    pub merge_rejections: usize,
    pub units_executed: usize,
    pub safety_violations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type Failure = (TmStatus, String);

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F>(f: F) -> TmStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TmStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("panic: {message}"));
            TmStatus::Panic
        }
    }
}

fn sim_failure(e: SimError) -> Failure {
    let status = match &e {
        SimError::InvalidRequest { .. }
        | SimError::UnsortedWorkload { .. }
        | SimError::DuplicateRequestId(_)
        | SimError::TraceParse { .. }
        | SimError::TraceDuplicate { .. } => TmStatus::InvalidWorkload,
        SimError::InvalidConfig(_)
        | SimError::InvalidSpec(_)
        | SimError::UnknownOperation(_)
        | SimError::UnknownPolicy(_) => TmStatus::InvalidArgument,
        SimError::Io { .. } => TmStatus::Io,
        _ => TmStatus::Internal,
    };
    (status, e.to_string())
}

fn null(name: &str) -> Failure {
    (TmStatus::NullPointer, format!("`{name}` is NULL"))
}

fn invalid(message: String) -> Failure {
    (TmStatus::InvalidArgument, message)
}

unsafe fn path_arg(path: *const c_char) -> Result<String, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid("path is not valid UTF-8".into()))
}

fn policy_from(code: u32) -> Result<SchedulingPolicy, Failure> {
    match code {
        TM_POLICY_FCFS => Ok(SchedulingPolicy::Fcfs),
        TM_POLICY_EDF => Ok(SchedulingPolicy::Edf),
        TM_POLICY_MU => Ok(SchedulingPolicy::Mu),
        other => Err(invalid(format!("unknown policy code {other}"))),
    }
}

fn level_from(code: u32) -> Result<MergeLevel, Failure> {
    match code {
        TM_MERGE_TASK => Ok(MergeLevel::TaskLevel),
        TM_MERGE_OPERATION => Ok(MergeLevel::OperationLevel),
        TM_MERGE_DATA => Ok(MergeLevel::DataLevel),
        other => Err(invalid(format!("unknown merge level code {other}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn tm_workload_params_default() -> TmWorkloadParams {
    let d = WorkloadSpec::default();
    TmWorkloadParams {
        task_count: d.task_count,
        arrival_window: d.arrival_window,
        video_count: d.video_count,
        duplicate_prob: d.duplicate_prob,
        same_params_prob: d.same_params_prob,
        op_change_prob: d.op_change_prob,
        startup_delay: d.startup_delay,
        seed: d.seed,
    }
}

#[no_mangle]
pub extern "C" fn tm_sim_config_default() -> TmSimConfig {
    let d = SimConfig::default();
    TmSimConfig {
        machines: d.machines,
        local_queue_capacity: d.local_queue_capacity,
        policy: TM_POLICY_FCFS,
        merge_enabled: d.merge_enabled,
        kappa_operation: d.merge_factors.operation(),
        kappa_data: d.merge_factors.data(),
        rng_seed: d.rng_seed,
        exec_noise: d.exec_noise,
    }
}

fn store_trace(out: *mut *mut TmTrace, requests: Vec<TaskRequest>) {
    let handle = Box::into_raw(Box::new(TmTrace { requests }));
    // SAFETY: callers check `out` for NULL first.
    unsafe { *out = handle };
}

/// Generates a synthetic trace into `*out`.
///
/// # Safety
/// `params` must point to a valid `TmWorkloadParams` and `out` to writable
/// storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn tm_trace_generate(
    params: *const TmWorkloadParams,
    out: *mut *mut TmTrace,
) -> TmStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = WorkloadSpec {
            task_count: p.task_count,
            arrival_window: p.arrival_window,
            video_count: p.video_count,
            duplicate_prob: p.duplicate_prob,
            same_params_prob: p.same_params_prob,
            op_change_prob: p.op_change_prob,
            startup_delay: p.startup_delay,
            seed: p.seed,
            ..WorkloadSpec::default()
        };
        let requests = generate(&spec).map_err(sim_failure)?;
        store_trace(out, requests);
        Ok(())
    })
}

/// Reads a JSON Lines trace file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable storage for one
/// handle.
#[no_mangle]
pub unsafe extern "C" fn tm_trace_read(path: *const c_char, out: *mut *mut TmTrace) -> TmStatus {
    guard(|| {
        let path = path_arg(path)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let requests = read_trace(&path).map_err(sim_failure)?;
        store_trace(out, requests);
        Ok(())
    })
}

/// Writes `trace` as JSON Lines to `path`.
///
/// # Safety
/// `trace` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tm_trace_write(trace: *const TmTrace, path: *const c_char) -> TmStatus {
    guard(|| {
        let trace = trace.as_ref().ok_or_else(|| null("trace"))?;
        let path = path_arg(path)?;
        write_trace(&trace.requests, &path).map_err(sim_failure)
    })
}

/// Number of requests in `trace`; 0 for NULL.
///
/// # Safety
/// `trace` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tm_trace_len(trace: *const TmTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.requests.len())
}

/// Releases a trace. NULL is ignored.
///
/// # Safety
/// `trace` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tm_trace_free(trace: *mut TmTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Simulates `trace` under `config` and writes aggregate metrics to `*out`.
///
/// # Safety
/// `trace` must be a live handle, `config` a valid `TmSimConfig`, and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tm_simulate(
    trace: *const TmTrace,
    config: *const TmSimConfig,
    out: *mut TmRunMetrics,
) -> TmStatus {
    guard(|| {
        let trace = trace.as_ref().ok_or_else(|| null("trace"))?;
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let config = SimConfig {
            machines: c.machines,
            local_queue_capacity: c.local_queue_capacity,
            policy: policy_from(c.policy)?,
            merge_enabled: c.merge_enabled,
            merge_factors: MergeCostFactors::new(c.kappa_operation, c.kappa_data)
                .map_err(sim_failure)?,
            rng_seed: c.rng_seed,
            exec_noise: c.exec_noise,
            audit: false,
        };
        let m = run(&trace.requests, &config).map_err(sim_failure)?;
        *out = TmRunMetrics {
            requests: m.requests,
            late: m.late,
            deadline_miss_rate: m.deadline_miss_rate,
            makespan: m.makespan,
            merges_task: m.merges.task,
            merges_operation: m.merges.operation,
            merges_data: m.merges.data,
            merge_rejections: m.merge_rejections,
            units_executed: m.units_executed,
            safety_violations: m.safety_violations,
        };
        Ok(())
    })
}

/// Execution-time estimate of a task after absorbing another at `level`
/// (one of the `TM_MERGE_*` constants).
///
/// # Safety
/// `out_mean` and `out_std` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn tm_merged_exec_estimate(
    base_mean: f64,
    base_std: f64,
    add_mean: f64,
    add_std: f64,
    level: u32,
    kappa_operation: f64,
    kappa_data: f64,
    out_mean: *mut f64,
    out_std: *mut f64,
) -> TmStatus {
    guard(|| {
        let level = level_from(level)?;
        let factors = MergeCostFactors::new(kappa_operation, kappa_data).map_err(sim_failure)?;
        let out_mean = out_mean.as_mut().ok_or_else(|| null("out_mean"))?;
        let out_std = out_std.as_mut().ok_or_else(|| null("out_std"))?;
        for (name, v) in [
            ("base_mean", base_mean),
            ("base_std", base_std),
            ("add_mean", add_mean),
            ("add_std", add_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let e = merged_exec_estimate(
            ExecEstimate::new(base_mean, base_std),
            ExecEstimate::new(add_mean, add_std),
            level,
            &factors,
        );
        *out_mean = e.mean;
        *out_std = e.std;
        Ok(())
    })
}
