#ifndef METERSHARE_H
#define METERSHARE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_ARGUMENT = 2,
  MS_STATUS_INVALID_PARAMS = 3,
  MS_STATUS_INSUFFICIENT_SHARES = 4,
  MS_STATUS_INSUFFICIENT_PARTIES = 5,
  MS_STATUS_INCONSISTENT_SHARES = 6,
  MS_STATUS_UNKNOWN_HANDLE = 7,
  MS_STATUS_INVALID_SCENARIO = 8,
  MS_STATUS_IO = 9,
  MS_STATUS_FAILED = 10,
  MS_STATUS_PANIC = 11,
} MsStatus;

typedef enum MsAlgorithm {
  MS_ALGORITHM_NAA = 0,
  MS_ALGORITHM_NCAA = 1,
  MS_ALGORITHM_NIAA = 2,
} MsAlgorithm;

typedef enum MsProtocol {
  MS_PROTOCOL_TRAD = 0,
  MS_PROTOCOL_DEP2SA = 1,
  MS_PROTOCOL_NAA = 2,
  MS_PROTOCOL_NCAA = 3,
  MS_PROTOCOL_NIAA = 4,
} MsProtocol;

typedef enum MsSegment {
  MS_SEGMENT_SMS_TO_DCC = 0,
  MS_SEGMENT_BETWEEN_DCC = 1,
  MS_SEGMENT_DCC_TO_RECIPIENTS = 2,
} MsSegment;

// A simulated set of servers. Secrets are referred to by `uint32_t` slots.
typedef struct MsEngine MsEngine;

// The result of one simulated time slot.
typedef struct MsRun MsRun;

// Cost model parameters; widths in bits, `m` is meters per region.
typedef struct MsCostParams {
  uint64_t n_d;
  uint64_t n_s;
  uint64_t sigma;
  uint64_t m;
  uint64_t x_bits;
  uint64_t share_bits;
  uint64_t c_bits;
  uint64_t cipher_bits;
  uint64_t r_bits;
  double per_mult_seconds;
  uint64_t threads;
} MsCostParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null.
//
// The pointer stays valid until the next failing call on the same thread.
const char *ms_last_error(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library and not have been freed.
void ms_string_free(char *s);

// The prime modulus of the field.
uint64_t ms_field_modulus(void);

// Creates `n` servers tolerating `t` corruptions.
//
// # Safety
// `out` must be a valid pointer.
enum MsStatus ms_engine_new(uint32_t n, uint32_t t, uint64_t seed, struct MsEngine **out);

// # Safety
// `e` must be null or come from [`ms_engine_new`] and not have been freed.
void ms_engine_free(struct MsEngine *e);

// Shares `value` (reduced into the field) among the servers.
//
// # Safety
// `e` and `out` must be valid pointers.
enum MsStatus ms_engine_input(struct MsEngine *e, uint64_t value, uint32_t *out);

// Local addition.
//
// # Safety
// `e` and `out` must be valid pointers.
enum MsStatus ms_engine_add(struct MsEngine *e, uint32_t a, uint32_t b, uint32_t *out);

// Local subtraction.
//
// # Safety
// `e` and `out` must be valid pointers.
enum MsStatus ms_engine_sub(struct MsEngine *e, uint32_t a, uint32_t b, uint32_t *out);

// Interactive multiplication with degree reduction.
//
// # Safety
// `e` and `out` must be valid pointers.
enum MsStatus ms_engine_mul(struct MsEngine *e, uint32_t a, uint32_t b, uint32_t *out);

// `[x == y]` for a secret given as `nbits` shared bits, most significant first.
//
// # Safety
// `e` and `out` must be valid; `bits` must point to `nbits` slots.
enum MsStatus ms_engine_equals_public(struct MsEngine *e,
                                      const uint32_t *bits,
                                      size_t nbits,
                                      uint64_t y,
                                      uint32_t *out);

// Opens a secret to all live servers.
//
// # Safety
// `e` and `out` must be valid pointers.
enum MsStatus ms_engine_open(struct MsEngine *e, uint32_t slot, uint64_t *out);

// Crash-stops server `party` (1-based).
//
// # Safety
// `e` must be a valid pointer.
enum MsStatus ms_engine_fail_party(struct MsEngine *e, uint32_t party);

// Multiplications and communication rounds so far.
//
// # Safety
// `e` must be a valid pointer; either output may be null.
enum MsStatus ms_engine_counters(const struct MsEngine *e, uint64_t *mults, uint64_t *rounds);

// Simulates one time slot of a TOML scenario.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
enum MsStatus ms_run_scenario(const char *toml, uint32_t threads, struct MsRun **out);

// # Safety
// `r` must be null or come from [`ms_run_scenario`] and not have been freed.
void ms_run_free(struct MsRun *r);

// Number of regions and suppliers in the result matrix.
//
// # Safety
// All pointers must be valid.
enum MsStatus ms_run_shape(const struct MsRun *r, uint32_t *regions, uint32_t *suppliers);

// Imported and exported energy of supplier `supplier` in region `region`, both 1-based.
//
// # Safety
// All pointers must be valid.
enum MsStatus ms_run_cell(const struct MsRun *r,
                          uint32_t region,
                          uint32_t supplier,
                          uint64_t *imp,
                          uint64_t *exp);

// 1 when the result equals the plaintext sums, 0 otherwise or on a null run.
//
// # Safety
// `r` must be null or valid.
int32_t ms_run_matches_oracle(const struct MsRun *r);

// The result matrix as CSV. Free with [`ms_string_free`].
//
// # Safety
// `r` and `out` must be valid pointers.
enum MsStatus ms_run_matrix_csv(const struct MsRun *r, char **out);

struct MsCostParams ms_cost_params_default(void);

// Multiplications one region needs under `alg`.
//
// # Safety
// `params` and `out` must be valid pointers.
enum MsStatus ms_formula_mults(enum MsAlgorithm alg,
                               const struct MsCostParams *params,
                               double *out);

// Bits sent on one segment of the communication table.
//
// # Safety
// `params` and `out` must be valid pointers.
enum MsStatus ms_formula_comm(enum MsProtocol protocol,
                              enum MsSegment segment,
                              const struct MsCostParams *params,
                              double *out);

// Seconds for `mults` multiplications at the configured rate and thread count.
//
// # Safety
// `params` and `out` must be valid pointers.
enum MsStatus ms_extrapolate_cpu(double mults, const struct MsCostParams *params, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METERSHARE_H */
