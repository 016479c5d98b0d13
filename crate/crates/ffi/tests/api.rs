use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use taskmerge_ffi::*;

fn last_error() -> String {
    let p = tm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn trace(tasks: usize, seed: u64) -> *mut TmTrace {
    let params = TmWorkloadParams {
        task_count: tasks,
        seed,
        ..tm_workload_params_default()
    };
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { tm_trace_generate(&params, &mut out) },
        TmStatus::Ok
    );
    out
}

#[test]
fn simulate_matches_core() {
    let t = trace(150, 2);
    let mut config = tm_sim_config_default();
    config.policy = TM_POLICY_MU;
    let mut m = TmRunMetrics::default();
    assert_eq!(unsafe { tm_simulate(t, &config, &mut m) }, TmStatus::Ok);
    assert!(tm_last_error_message().is_null());

    let spec = taskmerge::WorkloadSpec {
        task_count: 150,
        seed: 2,
        ..Default::default()
    };
    let reference = taskmerge::run(
        &taskmerge::generate(&spec).unwrap(),
        &taskmerge::SimConfig {
            policy: taskmerge::SchedulingPolicy::Mu,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(m.requests, reference.requests);
    assert_eq!(m.late, reference.late);
    assert_eq!(m.makespan, reference.makespan);
    assert_eq!(m.merges_data, reference.merges.data);
    assert_eq!(m.units_executed, reference.units_executed);
    unsafe { tm_trace_free(t) };
}

#[test]
fn trace_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.jsonl").to_str().unwrap()).unwrap();
    let t = trace(40, 1);
    assert_eq!(unsafe { tm_trace_write(t, path.as_ptr()) }, TmStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(
        unsafe { tm_trace_read(path.as_ptr(), &mut back) },
        TmStatus::Ok
    );
    assert_eq!(unsafe { tm_trace_len(back) }, 40);
    unsafe {
        tm_trace_free(t);
        tm_trace_free(back);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut out = ptr::null_mut();
    let missing = CString::new("/nonexistent/trace.jsonl").unwrap();
    assert_eq!(
        unsafe { tm_trace_read(missing.as_ptr(), &mut out) },
        TmStatus::Io
    );
    assert!(out.is_null());
    assert!(last_error().contains("/nonexistent/trace.jsonl"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"request_id\": 1}\n").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { tm_trace_read(bad.as_ptr(), &mut out) },
        TmStatus::InvalidWorkload
    );
    assert!(last_error().contains("video_id"));

    assert_eq!(
        unsafe { tm_trace_read(ptr::null(), &mut out) },
        TmStatus::NullPointer
    );
    let params = TmWorkloadParams {
        duplicate_prob: 2.0,
        ..tm_workload_params_default()
    };
    assert_eq!(
        unsafe { tm_trace_generate(&params, &mut out) },
        TmStatus::InvalidArgument
    );

    let t = trace(10, 0);
    let mut m = TmRunMetrics::default();
    let mut config = tm_sim_config_default();
    config.kappa_data = 0.0;
    assert_eq!(
        unsafe { tm_simulate(t, &config, &mut m) },
        TmStatus::InvalidArgument
    );
    config = tm_sim_config_default();
    config.machines = 0;
    assert_eq!(
        unsafe { tm_simulate(t, &config, &mut m) },
        TmStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { tm_simulate(t, ptr::null(), &mut m) },
        TmStatus::NullPointer
    );
    unsafe {
        tm_trace_free(t);
        tm_trace_free(ptr::null_mut());
    }
    assert_eq!(unsafe { tm_trace_len(ptr::null()) }, 0);
}

#[test]
fn merged_estimate_examples() {
    let (mut mean, mut sd) = (0.0, 0.0);
    let status = unsafe {
        tm_merged_exec_estimate(
            10.0,
            1.0,
            8.0,
            0.5,
            TM_MERGE_OPERATION,
            0.5,
            0.9,
            &mut mean,
            &mut sd,
        )
    };
    assert_eq!(status, TmStatus::Ok);
    assert_eq!(mean, 14.0);
    assert!((sd - 1.0625f64.sqrt()).abs() < 1e-12);

    let status = unsafe {
        tm_merged_exec_estimate(
            10.0,
            0.0,
            6.0,
            0.0,
            TM_MERGE_DATA,
            0.5,
            0.9,
            &mut mean,
            &mut sd,
        )
    };
    assert_eq!(status, TmStatus::Ok);
    assert!((mean - 15.4).abs() < 1e-12);

    let status = unsafe {
        tm_merged_exec_estimate(
            10.0,
            0.0,
            6.0,
            0.0,
            TM_MERGE_TASK,
            0.5,
            0.9,
            &mut mean,
            &mut sd,
        )
    };
    assert_eq!(status, TmStatus::Ok);
    assert_eq!(mean, 10.0);

    let status =
        unsafe { tm_merged_exec_estimate(10.0, 0.0, 6.0, 0.0, 7, 0.5, 0.9, &mut mean, &mut sd) };
    assert_eq!(status, TmStatus::InvalidArgument);
    let status = unsafe {
        tm_merged_exec_estimate(
            -1.0,
            0.0,
            6.0,
            0.0,
            TM_MERGE_DATA,
            0.5,
            0.9,
            &mut mean,
            &mut sd,
        )
    };
    assert_eq!(status, TmStatus::InvalidArgument);
    assert!(last_error().contains("base_mean"));
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(tm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    let lib = profile_dir.join("libtaskmerge_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_against_header() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let Some(lib) = static_lib() else {
        eprintln!("static library not built; skipping C link test");
        return;
    };
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("running cc");
    assert!(status.success());
    let run = Command::new(&exe).output().unwrap();
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
