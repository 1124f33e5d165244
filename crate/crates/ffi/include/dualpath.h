#ifndef DUALPATH_H
#define DUALPATH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Integration strategy.
 */
typedef enum DpMode {
  DP_MODE_CONDITIONAL = 0,
  DP_MODE_SIMPLE = 1,
  DP_MODE_ONLY3D = 2,
  DP_MODE_ONLY2D = 3,
} DpMode;

/*
 Which pathway produced a proposal.
 */
typedef enum DpSource {
  DP_SOURCE_PATH3D = 0,
  DP_SOURCE_PATH2D = 1,
  DP_SOURCE_MERGED = 2,
} DpSource;

/*
 Status codes returned by every fallible entry point.
 */
typedef enum DpStatus {
  DP_STATUS_OK = 0,
  DP_STATUS_NULL_POINTER = 1,
  DP_STATUS_INVALID_ARGUMENT = 2,
  DP_STATUS_OUT_OF_RANGE = 3,
  DP_STATUS_DIMENSION_MISMATCH = 4,
  DP_STATUS_IO = 5,
  DP_STATUS_PARSE = 6,
  DP_STATUS_CONFIG = 7,
  DP_STATUS_PANIC = 99,
} DpStatus;

/*
 Opaque proposal set.
 */
typedef struct DpProposalSet DpProposalSet;

/*
 Thresholds for conditional integration.
 */
typedef struct DpIntegrationConfig {
  double theta_3d;
  double theta_2d;
  double eps_unique;
} DpIntegrationConfig;

/*
 Symmetric and the two directional overlaps of a mask pair.
 */
typedef struct DpIoU {
  double iou;
  double iou_3d;
  double iou_2d;
} DpIoU;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *dp_version(void);

/*
 Message for the most recent failure on this thread, or NULL.

 The pointer stays valid until the next call into the library on the
 same thread.
 */
const char *dp_last_error_message(void);

/*
 Short fixed name of a status code.
 */
const char *dp_status_name(enum DpStatus status);

/*
 Writes the default thresholds into `out`.

 # Safety
 `out` must be NULL or point to writable memory for one config.
 */
enum DpStatus dp_integration_config_default(struct DpIntegrationConfig *out);

/*
 Creates an empty proposal set over `point_count` points.

 # Safety
 `out` must be NULL or point to writable memory for one handle pointer.
 */
enum DpStatus dp_proposal_set_new(size_t point_count, struct DpProposalSet **out);

/*
 Appends a proposal. Indices may be unsorted but must be distinct and
 below the set's point count. `feature` may be NULL when `feature_len`
 is 0. The set must be sealed with [`dp_proposal_set_finish`] before use.

 # Safety
 `id` must be a NUL-terminated string, `indices` must point to
 `index_count` values and `feature` to `feature_len` values.
 */
enum DpStatus dp_proposal_set_push(struct DpProposalSet *set,
                                   const char *id,
                                   const uint32_t *indices,
                                   size_t index_count,
                                   enum DpSource source,
                                   const float *feature,
                                   size_t feature_len);

/*
 Validates proposals appended since the last call (unique ids, one
 feature dimension). On failure the pending proposals are discarded.

 # Safety
 `set` must be NULL or a live handle.
 */
enum DpStatus dp_proposal_set_finish(struct DpProposalSet *set);

/*
 Reads a proposal set from a JSON file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DpStatus dp_proposal_set_load(const char *path, struct DpProposalSet **out);

/*
 Writes a proposal set to a JSON file.

 # Safety
 `set` must be a live handle and `path` a NUL-terminated string.
 */
enum DpStatus dp_proposal_set_save(const struct DpProposalSet *set, const char *path);

/*
 Serializes a proposal set to a newly allocated JSON string.

 # Safety
 `set` must be a live handle; `out` must be writable.
 */
enum DpStatus dp_proposal_set_to_json(const struct DpProposalSet *set, char **out);

/*
 Number of validated proposals in the set.

 # Safety
 `set` must be a live handle; `out` must be writable.
 */
enum DpStatus dp_proposal_set_len(const struct DpProposalSet *set, size_t *out);

/*
 Number of points in the cloud the set refers to.

 # Safety
 `set` must be a live handle; `out` must be writable.
 */
enum DpStatus dp_proposal_set_point_count(const struct DpProposalSet *set, size_t *out);

/*
 Borrows the sorted point indices of proposal `k`. The pointer stays
 valid while the set is alive and unmodified.

 # Safety
 `set` must be a live handle; `indices` and `count` must be writable.
 */
enum DpStatus dp_proposal_set_mask(const struct DpProposalSet *set,
                                   size_t k,
                                   const uint32_t **indices,
                                   size_t *count);

/*
 Copies the id of proposal `k` into a newly allocated string.

 # Safety
 `set` must be a live handle; `out` must be writable.
 */
enum DpStatus dp_proposal_set_id(const struct DpProposalSet *set, size_t k, char **out);

/*
 Releases a handle. NULL is ignored.

 # Safety
 `set` must be NULL or a handle not yet freed.
 */
void dp_proposal_set_free(struct DpProposalSet *set);

/*
 Releases a string returned by the library. NULL is ignored.

 # Safety
 `s` must be NULL or a string from this library not yet freed.
 */
void dp_string_free(char *s);

/*
 Overlap of 3D proposal `i` with 2D proposal `j`.

 # Safety
 Both sets must be live handles; `out` must be writable.
 */
enum DpStatus dp_iou(const struct DpProposalSet *set_3d,
                     size_t i,
                     const struct DpProposalSet *set_2d,
                     size_t j,
                     struct DpIoU *out);

/*
 Combines a 3D and a 2D proposal set. `config` may be NULL for the
 defaults. When `report_json` is non-NULL and the mode is conditional it
 receives the per-proposal decision report; otherwise it is set to NULL.

 # Safety
 Both sets must be live handles; `out` must be writable; `config` and
 `report_json` must be NULL or valid.
 */
enum DpStatus dp_integrate(const struct DpProposalSet *set_3d,
                           const struct DpProposalSet *set_2d,
                           enum DpMode mode,
                           const struct DpIntegrationConfig *config,
                           struct DpProposalSet **out,
                           char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DUALPATH_H */
