#ifndef GRIDMATCH_H
#define GRIDMATCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GmStatus {
  GM_STATUS_OK = 0,
  GM_STATUS_NULL_POINTER = 1,
  GM_STATUS_INVALID_UTF8 = 2,
  GM_STATUS_PARSE = 3,
  GM_STATUS_CONFIG = 4,
  GM_STATUS_IO = 5,
  // The model rejected its input (bad network, market rule, shape).
  GM_STATUS_DOMAIN = 6,
  GM_STATUS_INFEASIBLE = 7,
  GM_STATUS_SOLVER = 8,
  // Caller buffer too small; the required length was written back.
  GM_STATUS_BUFFER_TOO_SMALL = 9,
  GM_STATUS_PANIC = 10,
} GmStatus;

// Solution status of an OPF solve.
typedef enum GmOpfStatus {
  GM_OPF_STATUS_OPTIMAL = 0,
  GM_OPF_STATUS_INFEASIBLE = 1,
  GM_OPF_STATUS_ITERATION_LIMIT = 2,
} GmOpfStatus;

typedef struct GmConfig GmConfig;

typedef struct GmNetwork GmNetwork;

typedef struct GmOpfInstance GmOpfInstance;

typedef struct GmOpfSolution GmOpfSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length, or 0 if none.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t gm_last_error(char *buf, size_t len);

// # Safety
// `s` must be null or a string returned by this library.
void gm_string_free(char *s);

// Parses a network file's contents.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum GmStatus gm_network_parse(const char *text, struct GmNetwork **out);

// The bundled IEEE 33-bus feeder.
//
// # Safety
// `out` must be writable.
enum GmStatus gm_network_ieee33(struct GmNetwork **out);

// # Safety
// `net` must be null or a handle from this library, not yet freed.
void gm_network_free(struct GmNetwork *net);

// # Safety
// `net` must be a live handle; `out` must be writable.
enum GmStatus gm_network_bus_count(const struct GmNetwork *net, size_t *out);

// Checks a partition's intra-zone voltage spread at `load_scale` times the
// nominal loads. `partition` is a partition file's contents, or null for the
// bundled 33-bus zones. `*pass` is set to 1 when every zone is within delta.
//
// # Safety
// `net` must be a live handle; `partition` null or NUL-terminated; `pass` writable.
enum GmStatus gm_partition_validate(const struct GmNetwork *net,
                                    const char *partition,
                                    double load_scale,
                                    int *pass);

// Parses an OPF instance file's contents.
//
// # Safety
// `text` must be NUL-terminated; `out` writable.
enum GmStatus gm_opf_instance_parse(const char *text, struct GmOpfInstance **out);

// # Safety
// `inst` must be null or a live handle.
void gm_opf_instance_free(struct GmOpfInstance *inst);

// Solves an instance. An infeasible instance still yields a solution handle
// (status `Infeasible`, message in the last error) and returns
// `GmStatus::Infeasible`.
//
// # Safety
// `inst` must be a live handle; `out` writable.
enum GmStatus gm_opf_solve(const struct GmOpfInstance *inst, struct GmOpfSolution **out);

// # Safety
// `sol` must be null or a live handle.
void gm_opf_solution_free(struct GmOpfSolution *sol);

// # Safety
// `sol` must be a live handle; `out` writable.
enum GmStatus gm_opf_solution_status(const struct GmOpfSolution *sol, enum GmOpfStatus *out);

// Slack active injection (pu) and objective ($).
//
// # Safety
// `sol` must be a live handle; `p_g` and `objective` writable.
enum GmStatus gm_opf_solution_summary(const struct GmOpfSolution *sol,
                                      double *p_g,
                                      double *objective);

// Squared voltages per bus (pu), in file order. With `buf` null or `len`
// too small, writes the bus count to `*written` and returns
// `BufferTooSmall`.
//
// # Safety
// `sol` must be a live handle; `buf` null or `len` writable doubles; `written` writable.
enum GmStatus gm_opf_solution_v_sq(const struct GmOpfSolution *sol,
                                   double *buf,
                                   size_t len,
                                   size_t *written);

// Solution CSV (`*csv`) and residual report CSV (`*residuals`); release
// both with `gm_string_free`. Either output may be null to skip it.
//
// # Safety
// `sol` must be a live handle; `csv` and `residuals_csv` null or writable.
enum GmStatus gm_opf_solution_csv(const struct GmOpfSolution *sol,
                                  char **csv,
                                  char **residuals_csv);

// Reactive window [q_min, q_max] (kVAr) of an inverter rated `r_s` kVA
// producing `r_p` kW over a base reactive load `base_q`.
//
// # Safety
// `q_min` and `q_max` must be writable.
enum GmStatus gm_reactive_caps(double r_s, double r_p, double base_q, double *q_min, double *q_max);

// Loads a run configuration; relative paths resolve against its directory.
//
// # Safety
// `path` must be NUL-terminated; `out` writable.
enum GmStatus gm_config_load(const char *path, struct GmConfig **out);

// # Safety
// `cfg` must be null or a live handle.
void gm_config_free(struct GmConfig *cfg);

// Generates the day for scenario seed `seed` as CSV; release with
// `gm_string_free`.
//
// # Safety
// `cfg` must be a live handle; `out` writable.
enum GmStatus gm_scenario_generate(const struct GmConfig *cfg, uint64_t seed, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDMATCH_H */
