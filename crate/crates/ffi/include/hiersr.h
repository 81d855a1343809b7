#ifndef HIERSR_H
#define HIERSR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HsrBackend {
  HSR_BACKEND_NEAREST = 0,
  HSR_BACKEND_LINEAR = 1,
} HsrBackend;

typedef enum HsrDownscaler {
  HSR_DOWNSCALER_MEAN_POOL = 0,
  HSR_DOWNSCALER_SUBSAMPLE = 1,
} HsrDownscaler;

typedef enum HsrStatus {
  HSR_STATUS_OK = 0,
  HSR_STATUS_NULL_POINTER = 1,
  HSR_STATUS_INVALID_ARGUMENT = 2,
  HSR_STATUS_SHAPE_MISMATCH = 3,
  HSR_STATUS_IO = 4,
  HSR_STATUS_FORMAT = 5,
  HSR_STATUS_INVARIANT = 6,
  HSR_STATUS_BACKEND = 7,
  HSR_STATUS_PANIC = 8,
} HsrStatus;

/**
 * Opaque SR-octree handle.
 */
typedef struct HsrTree HsrTree;

/**
 * Opaque volume handle.
 */
typedef struct HsrVolume HsrVolume;

typedef struct HsrBuildConfig {
  double epsilon;
  size_t min_chunk;
  uint32_t min_level;
  uint32_t max_level;
  enum HsrDownscaler downscaler;
} HsrBuildConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next call into this library from the same thread.
 */
const char *hsr_last_error(void);

/**
 * Copies `len` floats from `data` into a new volume of shape `dims[0..ndim]`
 * (row-major, last axis fastest).
 *
 * # Safety
 * `dims` must point to `ndim` values and `data` to `len` floats.
 */
enum HsrStatus hsr_volume_new(const size_t *dims,
                              size_t ndim,
                              const float *data,
                              size_t len,
                              struct HsrVolume **out);

/**
 * # Safety
 * `v` must come from this library and not be used afterwards. NULL is ignored.
 */
void hsr_volume_free(struct HsrVolume *v);

/**
 * Number of axes (2 or 3); 0 for NULL.
 *
 * # Safety
 * `v` must be a live handle or NULL.
 */
size_t hsr_volume_ndim(const struct HsrVolume *v);

/**
 * Voxel count; 0 for NULL.
 *
 * # Safety
 * `v` must be a live handle or NULL.
 */
size_t hsr_volume_len(const struct HsrVolume *v);

/**
 * Writes the shape into `out[0..cap]`; `cap` must be at least the ndim.
 *
 * # Safety
 * `out` must have room for `cap` values.
 */
enum HsrStatus hsr_volume_dims(const struct HsrVolume *v, size_t *out, size_t cap);

/**
 * Copies the voxels into `out`, which must hold exactly `len` floats.
 *
 * # Safety
 * `out` must have room for `len` floats.
 */
enum HsrStatus hsr_volume_copy_data(const struct HsrVolume *v, float *out, size_t len);

/**
 * Reads a `.hvol` header and its payload.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum HsrStatus hsr_volume_read(const char *path_, struct HsrVolume **out);

/**
 * # Safety
 * `v` must be a live handle and `path` a NUL-terminated string.
 */
enum HsrStatus hsr_volume_write(const struct HsrVolume *v, const char *path_);

/**
 * # Safety
 * `v` and `cfg` must be valid pointers.
 */
enum HsrStatus hsr_tree_build(const struct HsrVolume *v,
                              const struct HsrBuildConfig *cfg,
                              struct HsrTree **out);

/**
 * # Safety
 * `t` must come from this library and not be used afterwards. NULL is ignored.
 */
void hsr_tree_free(struct HsrTree *t);

/**
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum HsrStatus hsr_tree_read(const char *path_, struct HsrTree **out);

/**
 * # Safety
 * `t` must be a live handle and `path` a NUL-terminated string.
 */
enum HsrStatus hsr_tree_write(const struct HsrTree *t, const char *path_);

/**
 * Full-resolution voxels per stored voxel; 0 for NULL.
 *
 * # Safety
 * `t` must be a live handle or NULL.
 */
double hsr_tree_reduction_factor(const struct HsrTree *t);

/**
 * Coarsest leaf level; 0 for NULL.
 *
 * # Safety
 * `t` must be a live handle or NULL.
 */
uint32_t hsr_tree_max_level(const struct HsrTree *t);

/**
 * # Safety
 * `t` must be a live handle.
 */
enum HsrStatus hsr_hierarchical_downscale(const struct HsrTree *t, struct HsrVolume **out);

/**
 * Upscales `lr` (the tree's coarsest uniform grid) back to full resolution.
 *
 * # Safety
 * `lr` and `t` must be live handles.
 */
enum HsrStatus hsr_hierarchical_upscale(const struct HsrVolume *lr,
                                        const struct HsrTree *t,
                                        enum HsrBackend backend,
                                        struct HsrVolume **out);

/**
 * # Safety
 * `t` must be a live handle.
 */
enum HsrStatus hsr_blockwise_upscale(const struct HsrTree *t,
                                     enum HsrBackend backend,
                                     struct HsrVolume **out);

/**
 * # Safety
 * `a` and `b` must be live handles and `out` writable.
 */
enum HsrStatus hsr_psnr(const struct HsrVolume *a,
                        const struct HsrVolume *b,
                        double data_range,
                        double *out);

/**
 * # Safety
 * `a` and `b` must be live handles and `out` writable.
 */
enum HsrStatus hsr_ssim(const struct HsrVolume *a,
                        const struct HsrVolume *b,
                        double data_range,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIERSR_H */
