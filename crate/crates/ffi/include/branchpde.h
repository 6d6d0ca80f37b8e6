#ifndef BRANCHPDE_H
#define BRANCHPDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Values 2 to 5 match the CLI exit codes.
typedef enum BpdeStatus {
  BPDE_STATUS_OK = 0,
  BPDE_STATUS_NULL_POINTER = 1,
  BPDE_STATUS_CONFIG = 2,
  BPDE_STATUS_MODEL = 3,
  BPDE_STATUS_RUNTIME = 4,
  BPDE_STATUS_IO = 5,
  BPDE_STATUS_PANIC = 6,
} BpdeStatus;

typedef enum BpdeRunKind {
  BPDE_RUN_KIND_SCALAR = 0,
  BPDE_RUN_KIND_KELLER_SEGEL = 1,
  BPDE_RUN_KIND_FINITE_DIFFERENCE = 2,
} BpdeRunKind;

// Truncated Fourier field.
typedef struct BpdeField BpdeField;

// Finished solver run.
typedef struct BpdeRun BpdeRun;

// One row of a run's per-step series.
typedef struct BpdeSeriesRow {
  double t;
  uint64_t count_u;
  uint64_t count_v;
  double mass_u;
  double mass_v;
  uint64_t floor_hits;
  uint64_t cap_hits;
} BpdeSeriesRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or null. Valid until the
// next failing call on the same thread.
const char *bpde_last_error(void);

// Library version as a static nul-terminated string.
const char *bpde_version(void);

// Projects `count` particles (`dim` coordinates each, row-major) onto the
// Fourier basis of order `order` on the cube `[0, side)^dim`, normalized by
// `n_initial`.
//
// # Safety
// `positions` must point to `count * dim` doubles; `out` must be writable.
enum BpdeStatus bpde_field_from_particles(size_t dim,
                                          double side,
                                          const double *positions,
                                          size_t count,
                                          size_t n_initial,
                                          size_t order,
                                          struct BpdeField **out);

// Builds a field from `len` coefficients in the library's mode order.
//
// # Safety
// `coeffs` must point to `len` doubles; `out` must be writable.
enum BpdeStatus bpde_field_from_coeffs(size_t dim,
                                       double side,
                                       size_t order,
                                       const double *coeffs,
                                       size_t len,
                                       struct BpdeField **out);

// # Safety
// `field` must come from this library and not be used afterwards.
void bpde_field_free(struct BpdeField *field);

// # Safety
// `x` must point to `dim` doubles.
enum BpdeStatus bpde_field_evaluate(const struct BpdeField *field, const double *x, double *out);

// Writes the `dim` gradient components at `x` into `out`.
//
// # Safety
// `x` and `out` must each point to `dim` doubles.
enum BpdeStatus bpde_field_gradient(const struct BpdeField *field, const double *x, double *out);

// # Safety
// `out` must be writable.
enum BpdeStatus bpde_field_mass(const struct BpdeField *field, double *out);

// Squared `H^{-s}` norm.
//
// # Safety
// `out` must be writable.
enum BpdeStatus bpde_field_sobolev_norm_sq(const struct BpdeField *field, double s, double *out);

// Number of coefficients, or 0 for a null handle.
//
// # Safety
// `field` must be null or a live handle.
size_t bpde_field_coeff_count(const struct BpdeField *field);

// Copies `min(len, count)` coefficients into `buf`.
//
// # Safety
// `buf` must point to `len` writable doubles.
enum BpdeStatus bpde_field_coeffs(const struct BpdeField *field, double *buf, size_t len);

// Runs a solver. `config_json` is an optional run configuration (same
// schema as the CLI `--config` file); `preset` and `seed` override it. Pass
// null for either string to omit it. A run that fails part-way still
// returns a handle; check [`bpde_run_completed`].
//
// # Safety
// Non-null strings must be nul-terminated; `out` must be writable.
enum BpdeStatus bpde_run(enum BpdeRunKind kind,
                         const char *preset,
                         const char *config_json,
                         uint64_t seed,
                         struct BpdeRun **out);

// # Safety
// `run` must come from this library and not be used afterwards.
void bpde_run_free(struct BpdeRun *run);

// Writes 1 to `completed` if the run finished, else 0 and the failure's
// exit code to `exit_code`.
//
// # Safety
// Output pointers must be writable.
enum BpdeStatus bpde_run_completed(const struct BpdeRun *run,
                                   int32_t *completed,
                                   int32_t *exit_code);

// Number of series rows, or 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
size_t bpde_run_series_len(const struct BpdeRun *run);

// # Safety
// `out` must be writable.
enum BpdeStatus bpde_run_series_row(const struct BpdeRun *run,
                                    size_t index,
                                    struct BpdeSeriesRow *out);

// Writes the run directory (`run.json`, `series.csv`, snapshots) to `dir`.
//
// # Safety
// `dir` must be a nul-terminated path.
enum BpdeStatus bpde_run_write(const struct BpdeRun *run, const char *dir);

// Exact `v` mass of the linear Keller–Segel preset at time `t`.
double bpde_exact_mass_case2(double t);

// Least-squares slope of `ln(errors)` against `ln(ns)`.
//
// # Safety
// `ns` and `errors` must each point to `len` doubles; `slope` must be writable.
enum BpdeStatus bpde_fit_slope(const double *ns, const double *errors, size_t len, double *slope);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BRANCHPDE_H */
