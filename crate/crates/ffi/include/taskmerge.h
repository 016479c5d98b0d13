#ifndef TASKMERGE_H
#define TASKMERGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TM_POLICY_FCFS 0

#define TM_POLICY_EDF 1

#define TM_POLICY_MU 2

#define TM_MERGE_TASK 0

#define TM_MERGE_OPERATION 1

#define TM_MERGE_DATA 2

typedef enum TmStatus {
  TM_STATUS_OK = 0,
  TM_STATUS_NULL_POINTER = 1,
  TM_STATUS_INVALID_ARGUMENT = 2,
  // Malformed, unsorted or duplicate requests in a trace.
  TM_STATUS_INVALID_WORKLOAD = 3,
  TM_STATUS_IO = 4,
  // Internal consistency failure inside the simulator.
  TM_STATUS_INTERNAL = 5,
  TM_STATUS_PANIC = 6,
} TmStatus;

// A loaded or generated trace.
typedef struct TmTrace TmTrace;

typedef struct TmWorkloadParams {
  size_t task_count;
  double arrival_window;
  size_t video_count;
  double duplicate_prob;
  double same_params_prob;
  double op_change_prob;
  double startup_delay;
  uint64_t seed;
} TmWorkloadParams;

typedef struct TmSimConfig {
  size_t machines;
  size_t local_queue_capacity;
  // One of the `TM_POLICY_*` constants.
  uint32_t policy;
  bool merge_enabled;
  double kappa_operation;
  double kappa_data;
  uint64_t rng_seed;
  bool exec_noise;
} TmSimConfig;

typedef struct TmRunMetrics {
  size_t requests;
  size_t late;
  double deadline_miss_rate;
  double makespan;
  size_t merges_task;
  size_t merges_operation;
  size_t merges_data;
  size_t merge_rejections;
  size_t units_executed;
  size_t safety_violations;
} TmRunMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *tm_version(void);

// Message for the last failed call on this thread, or NULL. The pointer is
// valid until the next call into this library on the same thread.
const char *tm_last_error_message(void);

struct TmWorkloadParams tm_workload_params_default(void);

struct TmSimConfig tm_sim_config_default(void);

// Generates a synthetic trace into `*out`.
//
// # Safety
// `params` must point to a valid `TmWorkloadParams` and `out` to writable
// storage for one handle.
enum TmStatus tm_trace_generate(const struct TmWorkloadParams *params, struct TmTrace **out);

// Reads a JSON Lines trace file into `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable storage for one
// handle.
enum TmStatus tm_trace_read(const char *path, struct TmTrace **out);

// Writes `trace` as JSON Lines to `path`.
//
// # Safety
// `trace` must be a live handle and `path` a NUL-terminated string.
enum TmStatus tm_trace_write(const struct TmTrace *trace, const char *path);

// Number of requests in `trace`; 0 for NULL.
//
// # Safety
// `trace` must be NULL or a live handle.
size_t tm_trace_len(const struct TmTrace *trace);

// Releases a trace. NULL is ignored.
//
// # Safety
// `trace` must be NULL or a handle not yet freed.
void tm_trace_free(struct TmTrace *trace);

// Simulates `trace` under `config` and writes aggregate metrics to `*out`.
//
// # Safety
// `trace` must be a live handle, `config` a valid `TmSimConfig`, and `out`
// writable.
enum TmStatus tm_simulate(const struct TmTrace *trace,
                          const struct TmSimConfig *config,
                          struct TmRunMetrics *out);

// Execution-time estimate of a task after absorbing another at `level`
// (one of the `TM_MERGE_*` constants).
//
// # Safety
// `out_mean` and `out_std` must be writable.
enum TmStatus tm_merged_exec_estimate(double base_mean,
                                      double base_std,
                                      double add_mean,
                                      double add_std,
                                      uint32_t level,
                                      double kappa_operation,
                                      double kappa_data,
                                      double *out_mean,
                                      double *out_std);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TASKMERGE_H */
