#ifndef QPLAN_H
#define QPLAN_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum QplanLoadMode {
  QPLAN_LOAD_MODE_AVERAGE = 0,
  QPLAN_LOAD_MODE_BEST = 1,
  QPLAN_LOAD_MODE_WORST = 2,
} QplanLoadMode;

typedef enum QplanStatus {
  QPLAN_STATUS_OK = 0,
  QPLAN_STATUS_NULL_POINTER = 1,
  QPLAN_STATUS_INVALID_UTF8 = 2,
  QPLAN_STATUS_PARSE = 3,
  QPLAN_STATUS_PRECONDITION = 4,
  QPLAN_STATUS_GUARD_EXCEEDED = 5,
  QPLAN_STATUS_OUT_OF_RANGE = 6,
  QPLAN_STATUS_INTERNAL = 7,
} QplanStatus;

// A register-to-operator mapping and its cost.
typedef struct QplanAssignment QplanAssignment;

// A validated mapping instance.
typedef struct QplanInstance QplanInstance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *qplan_last_error(void);

// Slice-n-Repeat slice scale S in bits, as `num / den`.
//
// # Safety
// `num` and `den` must be valid for writes.
enum QplanStatus qplan_snr_scale(uint32_t alus_per_stage,
                                 uint64_t stage_mem_bits,
                                 uint64_t max_reg_bits,
                                 uint64_t *num,
                                 uint64_t *den);

// Slice-n-Repeat register sizes in whole bits, stage by stage. `out` must
// hold `stages * alus_per_stage` values.
//
// # Safety
// `out` must be valid for `len` writes.
enum QplanStatus qplan_snr_sizes(uint32_t stages,
                                 uint32_t alus_per_stage,
                                 uint64_t stage_mem_bits,
                                 uint64_t max_reg_bits,
                                 uint64_t *out,
                                 size_t len);

// Parses `{"registers": [{id, stage, cap}], "operators": [{id, size, c_s,
// c_u, chain, pos}]}`.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be valid for writes.
enum QplanStatus qplan_instance_from_json(const char *json, struct QplanInstance **out);

// # Safety
// `inst` must come from [`qplan_instance_from_json`] and not be freed yet.
void qplan_instance_free(struct QplanInstance *inst);

// # Safety
// `inst` must be a live handle or NULL.
size_t qplan_instance_num_registers(const struct QplanInstance *inst);

// # Safety
// `inst` must be a live handle or NULL.
size_t qplan_instance_num_operators(const struct QplanInstance *inst);

// Greedy mapping; `enhanced` turns on the undo step.
//
// # Safety
// `inst` must be a live handle; `out` must be valid for writes.
enum QplanStatus qplan_greedy_map(const struct QplanInstance *inst,
                                  bool enhanced,
                                  struct QplanAssignment **out);

// Minimum-cost mapping by exhaustive search. Fails with
// `GuardExceeded` on instances too large to enumerate.
//
// # Safety
// `inst` must be a live handle; `out` must be valid for writes.
enum QplanStatus qplan_exact_map(const struct QplanInstance *inst, struct QplanAssignment **out);

// # Safety
// `a` must be a live handle or NULL.
void qplan_assignment_free(struct QplanAssignment *a);

// Sum of chain costs, rounded to the nearest double.
//
// # Safety
// `a` must be a live handle or NULL.
double qplan_assignment_cost(const struct QplanAssignment *a);

// Operator id held by register `reg`, or -1 when it is unassigned.
//
// # Safety
// `a` must be a live handle; `op` must be valid for writes.
enum QplanStatus qplan_assignment_get(const struct QplanAssignment *a, size_t reg, int64_t *op);

// Stream-processor load of one operator holding `alloc_bits`.
//
// # Safety
// `out` must be valid for writes.
enum QplanStatus qplan_operator_load(uint64_t req_bits,
                                     uint64_t n_in,
                                     uint64_t n_out,
                                     uint64_t alloc_bits,
                                     enum QplanLoadMode mode,
                                     uint64_t key_bits,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QPLAN_H */
