#ifndef SACCADE_H
#define SACCADE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
#define SACCADE_OK 0

/**
 * A required pointer argument was null.
 */
#define SACCADE_ERR_NULL 1

/**
 * Arguments were structurally invalid (bad sizes, values out of range).
 */
#define SACCADE_ERR_INVALID 2

/**
 * The operation itself failed; see the last error message.
 */
#define SACCADE_ERR_RUNTIME 3

/**
 * Opaque CLEAR-MOT accumulator. Push ground-truth and hypothesis objects
 * frame by frame, then finish to get MOTA and MOTP.
 */
typedef struct SaccadeMot SaccadeMot;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (truncated,
 * always NUL-terminated). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null (query mode).
 */
uintptr_t saccade_last_error_message(char *buf, uintptr_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *saccade_version(void);

/**
 * Area under the ROC curve of `scores` against binary `labels` (midrank tie
 * handling). Writes the result to `out`.
 *
 * # Safety
 * `scores` and `labels` must point to `n` readable doubles; `out` must be
 * writable.
 */
int32_t saccade_auroc(const double *scores, const double *labels, uintptr_t n, double *out);

/**
 * Indices of the `k` highest-scoring patches (ties broken by ascending
 * index), written ascending into `out_indices`.
 *
 * # Safety
 * `scores` must point to `n` readable doubles in [0,1]; `out_indices` must
 * hold `k` writable size_t values.
 */
int32_t saccade_topk_select(const double *scores, uintptr_t n, uintptr_t k, uintptr_t *out_indices);

/**
 * Readout accounting for `sensed` patches of size `patch_size` with
 * `channels` channels: pixels read and the energy estimate under per-pixel
 * read and digitization costs.
 *
 * # Safety
 * `out_pixels` and `out_energy` must be writable or null (skipped).
 */
int32_t saccade_readout_cost(uintptr_t sensed,
                             uintptr_t patch_size,
                             uintptr_t channels,
                             double e_read,
                             double e_adc,
                             uint64_t *out_pixels,
                             double *out_energy);

/**
 * Generate a synthetic video dataset and write it to `dir`. Deterministic
 * per seed; layout matches the library's dataset reader.
 *
 * # Safety
 * `dir` must be a NUL-terminated UTF-8 path.
 */
int32_t saccade_generate_dataset(const char *dir,
                                 uintptr_t width,
                                 uintptr_t height,
                                 uintptr_t channels,
                                 uintptr_t n_frames,
                                 uintptr_t objects_min,
                                 uintptr_t objects_max,
                                 uintptr_t shift_interval,
                                 double clutter,
                                 uint64_t seed);

struct SaccadeMot *saccade_mot_new(double iou_min);

/**
 * Append one frame. Boxes are `x, y, w, h` quadruples, one per object.
 *
 * # Safety
 * `mot` must come from `saccade_mot_new`; arrays must match their counts.
 */
int32_t saccade_mot_push_frame(struct SaccadeMot *mot,
                               const uint32_t *gt_ids,
                               const double *gt_boxes,
                               uintptr_t n_gt,
                               const uint32_t *hyp_ids,
                               const double *hyp_boxes,
                               uintptr_t n_hyp);

/**
 * Evaluate the accumulated sequence. The handle stays valid and can keep
 * accumulating afterwards.
 *
 * # Safety
 * `mot` must come from `saccade_mot_new`; outputs writable or null.
 */
int32_t saccade_mot_finish(const struct SaccadeMot *mot, double *out_mota, double *out_motp);

/**
 * Release the accumulator. Null is a no-op.
 *
 * # Safety
 * `mot` must come from `saccade_mot_new` and not be used afterwards.
 */
void saccade_mot_free(struct SaccadeMot *mot);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SACCADE_H */
