#ifndef TERSOFF_H
#define TERSOFF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TERSOFF_SCHEME_AUTO 0

#define TERSOFF_SCHEME_REF 1

#define TERSOFF_SCHEME_SCALAR_OPT 2

#define TERSOFF_SCHEME_V1 3

#define TERSOFF_SCHEME_V2 4

#define TERSOFF_SCHEME_V3 5

#define TERSOFF_PRECISION_REF 0

#define TERSOFF_PRECISION_DOUBLE 1

#define TERSOFF_PRECISION_SINGLE 2

#define TERSOFF_PRECISION_MIXED 3

/**
 * Result of every fallible call.
 */
typedef enum TersoffStatus {
  TERSOFF_STATUS_OK = 0,
  TERSOFF_STATUS_INVALID_ARGUMENT = 1,
  TERSOFF_STATUS_PARSE = 2,
  TERSOFF_STATUS_CONFIG = 3,
  TERSOFF_STATUS_NUMERICAL = 4,
  TERSOFF_STATUS_IO = 5,
  TERSOFF_STATUS_PANIC = 6,
} TersoffStatus;

/**
 * Parameter table handle.
 */
typedef struct TersoffParams TersoffParams;

/**
 * Run report handle.
 */
typedef struct TersoffReport TersoffReport;

/**
 * Atom system handle.
 */
typedef struct TersoffSystem TersoffSystem;

/**
 * Force-evaluation options. `width` 0 selects the default for the precision.
 */
typedef struct TersoffOptions {
  uint32_t scheme;
  uint32_t precision;
  size_t width;
  size_t k_max;
  size_t workers;
} TersoffOptions;

/**
 * Run configuration. `width` 0 selects the default for the precision;
 * a negative `temperature` keeps the system's velocities.
 */
typedef struct TersoffRunConfig {
  size_t steps;
  double dt;
  double skin;
  size_t k_max;
  uint32_t scheme;
  uint32_t precision;
  size_t width;
  size_t workers;
  size_t thermo_every;
  uint64_t seed;
  double temperature;
} TersoffRunConfig;

/**
 * One thermodynamic sample.
 */
typedef struct TersoffSample {
  size_t step;
  double time_ps;
  double temp_k;
  double pe_ev;
  double ke_ev;
  double etot_ev;
} TersoffSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or "" after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *tersoff_last_error_message(void);

/**
 * The built-in silicon table.
 */
enum TersoffStatus tersoff_params_silicon(struct TersoffParams **out);

/**
 * Loads a parameter file.
 */
enum TersoffStatus tersoff_params_load(const char *path, struct TersoffParams **out);

/**
 * Parses parameter-file text.
 */
enum TersoffStatus tersoff_params_parse(const char *text, struct TersoffParams **out);

void tersoff_params_free(struct TersoffParams *params);

/**
 * Largest outer cutoff R + D over all triplets, or NaN for a null handle.
 */
double tersoff_params_cutoff(const struct TersoffParams *params);

/**
 * `8·nx·ny·nz` atoms of the first species on a periodic diamond lattice.
 */
enum TersoffStatus tersoff_system_diamond(const struct TersoffParams *params,
                                          size_t nx,
                                          size_t ny,
                                          size_t nz,
                                          double a0,
                                          double mass,
                                          double skin,
                                          struct TersoffSystem **out);

void tersoff_system_free(struct TersoffSystem *system);

/**
 * Number of atoms, or 0 for a null handle.
 */
size_t tersoff_system_len(const struct TersoffSystem *system);

/**
 * Copies positions as `x0 y0 z0 x1 ...` into `xyz`, which holds `len` doubles.
 */
enum TersoffStatus tersoff_system_get_positions(const struct TersoffSystem *system,
                                                double *xyz,
                                                size_t len);

/**
 * Replaces positions from `xyz` (`len` = 3·N doubles). Positions are wrapped
 * into the box; non-finite input is rejected.
 */
enum TersoffStatus tersoff_system_set_positions(struct TersoffSystem *system,
                                                const double *xyz,
                                                size_t len);

/**
 * Fills `out` with the default options (auto scheme, double precision).
 */
enum TersoffStatus tersoff_options_default(struct TersoffOptions *out);

/**
 * Potential energy (eV) and forces (eV/Å, `forces_len` = 3·N doubles).
 */
enum TersoffStatus tersoff_compute(const struct TersoffParams *params,
                                   const struct TersoffSystem *system,
                                   const struct TersoffOptions *options,
                                   double *energy,
                                   double *forces,
                                   size_t forces_len);

/**
 * Fills `out` with the default run configuration.
 */
enum TersoffStatus tersoff_run_config_default(struct TersoffRunConfig *out);

/**
 * Runs a simulation on a copy of `system`.
 */
enum TersoffStatus tersoff_run(const struct TersoffParams *params,
                               const struct TersoffSystem *system,
                               const struct TersoffRunConfig *config,
                               struct TersoffReport **out);

void tersoff_report_free(struct TersoffReport *report);

/**
 * Number of thermo samples, or 0 for a null handle.
 */
size_t tersoff_report_sample_count(const struct TersoffReport *report);

/**
 * Throughput of the timed loop, or NaN for a null handle.
 */
double tersoff_report_ns_per_day(const struct TersoffReport *report);

enum TersoffStatus tersoff_report_sample(const struct TersoffReport *report,
                                         size_t index,
                                         struct TersoffSample *out);

/**
 * The report as CSV. Free the string with [`tersoff_string_free`].
 * Returns null for a null handle.
 */
char *tersoff_report_csv(const struct TersoffReport *report);

void tersoff_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TERSOFF_H */
