#ifndef ECHO_FFI_H
#define ECHO_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EchoStatus {
  ECHO_STATUS_OK = 0,
  ECHO_STATUS_NULL_POINTER = 1,
  ECHO_STATUS_INVALID_UTF8 = 2,
  ECHO_STATUS_PARSE = 3,
  ECHO_STATUS_INVALID = 4,
  ECHO_STATUS_UNKNOWN_ID = 5,
  ECHO_STATUS_SELECTION = 6,
  ECHO_STATUS_DUPLICATE = 7,
  ECHO_STATUS_COVERAGE_GAP = 8,
  ECHO_STATUS_DEGENERATE_TABLE = 9,
  ECHO_STATUS_DOMAIN = 10,
  ECHO_STATUS_IO = 11,
  ECHO_STATUS_PANIC = 98,
  ECHO_STATUS_OTHER = 99,
} EchoStatus;

// Opaque study handle: configuration, corpus and an in-memory store.
typedef struct EchoStudy EchoStudy;

// Omnibus test summary.
typedef struct EchoOmnibus {
  double chi2;
  uint32_t dof;
  double p_value;
  double cramers_v;
  uint64_t n_votes;
} EchoOmnibus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until
// the next call into this library on the same thread.
const char *echo_last_error(void);

// # Safety
// `s` must be NULL or a string returned by this library, not yet freed.
void echo_string_free(char *s);

// Opens a bundled study ("diagnosis" or "hiring") with its vignette corpus
// built by the mock provider under `seed`.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum EchoStatus echo_study_open_bundled(const char *name, uint64_t seed, struct EchoStudy **out);

// # Safety
// `study` must be NULL or a handle from [`echo_study_open_bundled`], not yet freed.
void echo_study_free(struct EchoStudy *study);

// # Safety
// `study` must be a live handle or NULL.
size_t echo_study_record_count(const struct EchoStudy *study);

// Loads the bundled reference annotations for the study's domain.
//
// # Safety
// `study` must be a live handle; `added` may be NULL.
enum EchoStatus echo_study_load_fixtures(struct EchoStudy *study, size_t *added);

// Imports annotation CSV text. Invalid rows are counted in `rejected`
// and do not fail the call.
//
// # Safety
// `study` must be a live handle, `csv` a NUL-terminated string; the
// counters may be NULL.
enum EchoStatus echo_study_import_csv(struct EchoStudy *study,
                                      const char *csv,
                                      size_t *accepted,
                                      size_t *rejected);

// Descriptive matrix as JSON.
//
// # Safety
// `study` must be a live handle; `out` must be writable.
enum EchoStatus echo_study_dem_json(struct EchoStudy *study, char **out);

// Per-stakeholder test results as JSON.
//
// # Safety
// `study` must be a live handle; `out` must be writable.
enum EchoStatus echo_study_analysis_json(struct EchoStudy *study, char **out);

// Inferential matrix as JSON.
//
// # Safety
// `study` must be a live handle; `out` must be writable.
enum EchoStatus echo_study_iem_json(struct EchoStudy *study, char **out);

// Upper tail of the χ² distribution.
//
// # Safety
// `out` must be writable.
enum EchoStatus echo_chi2_survival(double x, uint32_t dof, double *out);

// Upper tail of the standard normal distribution.
double echo_normal_survival(double z);

// χ² homogeneity test on a row-major `rows` × `cols` count matrix.
//
// # Safety
// `counts` must point to `rows * cols` readable values; `out` must be writable.
enum EchoStatus echo_chi2_homogeneity(const uint64_t *counts,
                                      size_t rows,
                                      size_t cols,
                                      struct EchoOmnibus *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECHO_FFI_H */
