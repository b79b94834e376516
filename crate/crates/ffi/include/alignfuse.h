#ifndef ALIGNFUSE_H
#define ALIGNFUSE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum AfStatus {
  AF_STATUS_OK = 0,
  AF_STATUS_NULL_POINTER = 1,
  AF_STATUS_INVALID_INPUT = 2,
  AF_STATUS_EVALUATION = 3,
  AF_STATUS_CONFIG = 4,
  AF_STATUS_FORMAT = 5,
  AF_STATUS_GENERATION = 6,
  AF_STATUS_IO = 7,
  AF_STATUS_BUFFER_TOO_SMALL = 8,
  AF_STATUS_PANIC = 9,
} AfStatus;

// Opaque channels-last `height x width x channels` map.
typedef struct AfFeatureMap AfFeatureMap;

// Opaque deformable-attention parameter set.
typedef struct AfParams AfParams;

// Opaque multi-camera calibration.
typedef struct AfRig AfRig;

// Opaque set of non-empty voxels.
typedef struct AfVoxelSet AfVoxelSet;

typedef struct AfCafaShape {
  uintptr_t heads;
  uintptr_t points;
  uintptr_t image_dim;
  uintptr_t voxel_dim;
  uintptr_t token_dim;
  uintptr_t head_dim;
} AfCafaShape;

typedef struct AfProjection {
  // 1 when some camera sees the point, 0 otherwise (other fields zero).
  int32_t in_view;
  uint32_t camera_index;
  double pixel_x;
  double pixel_y;
  double depth;
} AfProjection;

typedef struct AfVoxelConfig {
  double voxel_size[3];
  double range_min[3];
  double range_max[3];
} AfVoxelConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// Valid until the next `af_*` call on the same thread.
const char *af_last_error(void);

// Library version as a static NUL-terminated string.
const char *af_version(void);

// Freshly initialized parameters: `M = 4`, `K = 8`, zero offset and
// attention layers, seeded random elsewhere.
//
// # Safety
// `out` must be a valid pointer to write a handle into.
enum AfStatus af_params_new(uintptr_t image_dim,
                            uintptr_t voxel_dim,
                            uint64_t seed,
                            struct AfParams **out);

// Single head, zero offsets, uniform attention, identity value path.
//
// # Safety
// `out` must be a valid pointer to write a handle into.
enum AfStatus af_params_passthrough(uintptr_t image_dim,
                                    uintptr_t voxel_dim,
                                    uintptr_t points,
                                    struct AfParams **out);

// # Safety
// `file` must be a NUL-terminated path, `out` a valid handle pointer.
enum AfStatus af_params_load(const char *file, struct AfParams **out);

// # Safety
// `params` must be a live handle, `file` a NUL-terminated path.
enum AfStatus af_params_save(const struct AfParams *params, const char *file);

// # Safety
// `params` must be a live handle and `shape` writable.
enum AfStatus af_params_shape(const struct AfParams *params, struct AfCafaShape *shape);

// # Safety
// `params` must come from this library and not be used afterwards. Null is ignored.
void af_params_free(struct AfParams *params);

// Copies `height * width * channels` values (row-major, channels last).
//
// # Safety
// `data` must point to that many doubles; `out` must be writable.
enum AfStatus af_feature_map_new(uintptr_t height,
                                 uintptr_t width,
                                 uintptr_t channels,
                                 const double *data,
                                 struct AfFeatureMap **out);

// # Safety
// `file` must be a NUL-terminated path, `out` writable.
enum AfStatus af_feature_map_load(const char *file, struct AfFeatureMap **out);

// Writes `[height, width, channels]` into `dims`.
//
// # Safety
// `map` must be a live handle, `dims` must hold 3 values.
enum AfStatus af_feature_map_dims(const struct AfFeatureMap *map, uintptr_t *dims);

// # Safety
// `map` must come from this library and not be used afterwards. Null is ignored.
void af_feature_map_free(struct AfFeatureMap *map);

// Zero-padded bilinear sample at column `x`, row `y`; writes `channels`
// values.
//
// # Safety
// `map` must be live; `out` must hold `out_len` doubles.
enum AfStatus af_bilinear_sample(const struct AfFeatureMap *map,
                                 double x,
                                 double y,
                                 double *out,
                                 uintptr_t out_len);

// Deformable cross-attention for one voxel. `levels` holds `n_levels` map
// handles, `refs` holds `2 * n_levels` reference coordinates `(x, y)`.
// Writes `voxel_dim` values into `out`.
//
// # Safety
// All pointers must be valid for the stated lengths.
enum AfStatus af_deform_cafa(const struct AfFeatureMap *const *levels,
                             uintptr_t n_levels,
                             const double *refs,
                             const double *voxel_feat,
                             uintptr_t voxel_len,
                             const struct AfParams *params,
                             double *out,
                             uintptr_t out_len);

// Ring of `count` yaw-spaced pinhole cameras at the origin.
//
// # Safety
// `out` must be writable.
enum AfStatus af_rig_ring(uintptr_t count,
                          uintptr_t width,
                          uintptr_t height,
                          double hfov_deg,
                          struct AfRig **out);

// Loads a calibration text file.
//
// # Safety
// `file` must be a NUL-terminated path, `out` writable.
enum AfStatus af_rig_load(const char *file, struct AfRig **out);

// # Safety
// `rig` must be a live handle.
uintptr_t af_rig_camera_count(const struct AfRig *rig);

// First camera in priority order that sees `xyz` (3 doubles, LiDAR frame).
//
// # Safety
// `rig` must be live, `xyz` must hold 3 doubles, `out` writable.
enum AfStatus af_rig_select_camera(const struct AfRig *rig,
                                   const double *xyz,
                                   struct AfProjection *out);

// # Safety
// `rig` must come from this library and not be used afterwards. Null is ignored.
void af_rig_free(struct AfRig *rig);

// Dynamic voxelization of `n` points. `positions` holds `3 n` doubles,
// `features` holds `n * feature_dim` doubles.
//
// # Safety
// Pointers must be valid for the stated lengths; `config` and `out` valid.
enum AfStatus af_voxelize(const double *positions,
                          const double *features,
                          uintptr_t n,
                          uintptr_t feature_dim,
                          const struct AfVoxelConfig *config,
                          struct AfVoxelSet **out);

// # Safety
// `set` must be a live handle.
uintptr_t af_voxels_len(const struct AfVoxelSet *set);

// Per-voxel feature width (point features plus 3 offset channels).
//
// # Safety
// `set` must be a live handle.
uintptr_t af_voxels_feature_dim(const struct AfVoxelSet *set);

// Copies `len * feature_dim` features, voxel-major.
//
// # Safety
// `set` must be live and `out` must hold `out_len` doubles.
enum AfStatus af_voxels_features(const struct AfVoxelSet *set, double *out, uintptr_t out_len);

// Copies `3 * len` voxel centers.
//
// # Safety
// `set` must be live and `out` must hold `out_len` doubles.
enum AfStatus af_voxels_centers(const struct AfVoxelSet *set, double *out, uintptr_t out_len);

// # Safety
// `set` must come from this library and not be used afterwards. Null is ignored.
void af_voxels_free(struct AfVoxelSet *set);

// Keeps exactly `keep` of `count` cameras, chosen by `seed`; writes one
// flag (1 kept, 0 dropped) per camera.
//
// # Safety
// `flags` must hold `count` bytes.
enum AfStatus af_dropout_mask(uintptr_t count, uintptr_t keep, uint64_t seed, uint8_t *flags);

// Runs the full pipeline and writes `fused.fvox`, `metrics.json` and
// `timings.json` into `out_dir`. `config` may be null for defaults.
//
// # Safety
// `config` must be null or a NUL-terminated path; `out_dir` likewise non-null.
enum AfStatus af_pipeline_run(const char *config, const char *out_dir, uint64_t seed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALIGNFUSE_H */
