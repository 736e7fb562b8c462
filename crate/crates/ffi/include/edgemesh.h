#ifndef EDGEMESH_H
#define EDGEMESH_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum EmStatus {
  EM_STATUS_OK = 0,
  EM_STATUS_NULL_POINTER = 1,
  // Bad UTF-8, malformed JSON or an out-of-range value.
  EM_STATUS_INVALID_ARGUMENT = 2,
  EM_STATUS_SCENARIO_INVALID = 3,
  EM_STATUS_PLAN_INFEASIBLE = 4,
  // The instance is beyond the exact solver's size guard.
  EM_STATUS_PLAN_TOO_LARGE = 5,
  EM_STATUS_IO = 6,
  EM_STATUS_PANIC = 99,
} EmStatus;

// A node battery following the timeslot energy model.
typedef struct EmBattery EmBattery;

// An optimal placement plan.
typedef struct EmPlan EmPlan;

// The metrics of one simulation run.
typedef struct EmSimResult EmSimResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message on this thread, or NULL. Release with [`em_string_free`].
char *em_last_error_message(void);

// # Safety
// `s` must be NULL or a string returned by this library, released once.
void em_string_free(char *s);

// Library version; static, do not free.
const char *em_version(void);

// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum EmStatus em_battery_new(double charge,
                             double capacity,
                             double phi,
                             double varphi,
                             struct EmBattery **out);

// Advances one slot with `solar` harvest while hosting `hosted`
// microservices, `local` of which originate here. Writes whether the node
// was active in the slot to `out_active` when it is not NULL.
//
// # Safety
// `battery` must come from [`em_battery_new`]; `out_active` may be NULL.
enum EmStatus em_battery_step(struct EmBattery *battery,
                              double solar,
                              uint32_t hosted,
                              uint32_t local,
                              uint8_t *out_active);

// # Safety
// `battery` must come from [`em_battery_new`]; `out` must be writable.
enum EmStatus em_battery_charge(const struct EmBattery *battery, double *out);

// # Safety
// `battery` must come from [`em_battery_new`]; `out` must be writable.
enum EmStatus em_battery_pct(const struct EmBattery *battery, double *out);

// # Safety
// `battery` must be NULL or come from [`em_battery_new`], released once.
void em_battery_free(struct EmBattery *battery);

// Solves a placement instance given as JSON.
//
// # Safety
// `instance_json` must be a NUL-terminated string; `out` must be writable.
enum EmStatus em_plan_solve_json(const char *instance_json, struct EmPlan **out);

// # Safety
// `plan` must come from [`em_plan_solve_json`]; `out` must be writable.
enum EmStatus em_plan_objective(const struct EmPlan *plan, uint64_t *out);

// The plan as JSON. Release with [`em_string_free`].
//
// # Safety
// `plan` must come from [`em_plan_solve_json`]; `out` must be writable.
enum EmStatus em_plan_to_json(const struct EmPlan *plan, char **out);

// # Safety
// `plan` must be NULL or come from [`em_plan_solve_json`], released once.
void em_plan_free(struct EmPlan *plan);

// The bundled three-node case-study scenario as JSON. Release with
// [`em_string_free`].
char *em_case_study_json(void);

// Runs a scenario given as JSON. When `override_seed` is nonzero, `seed`
// replaces the scenario's seed.
//
// # Safety
// `scenario_json` must be a NUL-terminated string; `out` must be writable.
enum EmStatus em_sim_run_json(const char *scenario_json,
                              uint8_t override_seed,
                              uint64_t seed,
                              struct EmSimResult **out);

// Smallest operative time over all nodes.
//
// # Safety
// `result` must come from [`em_sim_run_json`]; `out` must be writable.
enum EmStatus em_sim_objective(const struct EmSimResult *result, uint64_t *out);

// Per-slot metrics as CSV. Release with [`em_string_free`].
//
// # Safety
// `result` must come from [`em_sim_run_json`]; `out` must be writable.
enum EmStatus em_sim_metrics_csv(const struct EmSimResult *result, char **out);

// Writes metrics.csv, events.csv, summary.json and timeseries.svg into `dir`.
//
// # Safety
// `result` must come from [`em_sim_run_json`]; `dir` must be a NUL-terminated path.
enum EmStatus em_sim_export(const struct EmSimResult *result, const char *dir);

// # Safety
// `result` must be NULL or come from [`em_sim_run_json`], released once.
void em_sim_free(struct EmSimResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDGEMESH_H */
