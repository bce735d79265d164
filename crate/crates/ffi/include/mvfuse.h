#ifndef MVFUSE_H
#define MVFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MvStatus {
  MV_STATUS_OK = 0,
  MV_STATUS_INVALID_ARGUMENT = 1,
  MV_STATUS_FILE_ERROR = 2,
  MV_STATUS_PARSE_ERROR = 3,
  MV_STATUS_UNDEFINED_METRIC = 4,
  MV_STATUS_NULL_POINTER = 5,
  MV_STATUS_PANIC = 6,
} MvStatus;

/**
 * Camera list.
 */
typedef struct MvCameras MvCameras;

/**
 * Gaussian cloud.
 */
typedef struct MvCloud MvCloud;

/**
 * Image list; pixels are RGB doubles in `[0, 1]`.
 */
typedef struct MvImages MvImages;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy of the last error message on this thread, or null. Free with
 * [`mv_string_free`].
 */
char *mv_last_error(void);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void mv_string_free(char *s);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum MvStatus mv_orbit_cameras(size_t n,
                               double elevation_deg,
                               double radius,
                               double fov_deg,
                               size_t width,
                               size_t height,
                               struct MvCameras **out);

/**
 * # Safety
 * `cams` must be a live handle or null.
 */
size_t mv_cameras_len(const struct MvCameras *cams);

/**
 * # Safety
 * `cams` must come from this library or be null; it is invalid afterwards.
 */
void mv_cameras_free(struct MvCameras *cams);

/**
 * Generates a scene of `kind` ("blob-cluster", "ring" or "box-stack")
 * with the default palette.
 *
 * # Safety
 * `kind` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MvStatus mv_scene_generate(const char *kind,
                                size_t n_primitives,
                                uint64_t seed,
                                struct MvCloud **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MvStatus mv_cloud_from_json(const char *json, struct MvCloud **out);

/**
 * Serializes a cloud; free the string with [`mv_string_free`].
 *
 * # Safety
 * `cloud` must be a live handle and `out` a valid pointer.
 */
enum MvStatus mv_cloud_to_json(const struct MvCloud *cloud, char **out);

/**
 * # Safety
 * `cloud` must be a live handle or null.
 */
size_t mv_cloud_len(const struct MvCloud *cloud);

/**
 * # Safety
 * `cloud` must come from this library or be null.
 */
void mv_cloud_free(struct MvCloud *cloud);

/**
 * Renders `cloud` at every camera. A null `background` means mid gray;
 * otherwise it points at three doubles.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum MvStatus mv_render(const struct MvCloud *cloud,
                        const struct MvCameras *cams,
                        const double *background,
                        struct MvImages **out);

/**
 * # Safety
 * `images` must be a live handle or null.
 */
size_t mv_images_len(const struct MvImages *images);

/**
 * Width and height of view `index`.
 *
 * # Safety
 * `images` must be live; `width` and `height` valid.
 */
enum MvStatus mv_images_size(const struct MvImages *images,
                             size_t index,
                             size_t *width,
                             size_t *height);

/**
 * Copies view `index` as row-major RGB doubles into `buf`, which must hold
 * exactly `width * height * 3` values.
 *
 * # Safety
 * `buf` must point at `len` writable doubles.
 */
enum MvStatus mv_images_copy_view(const struct MvImages *images,
                                  size_t index,
                                  double *buf,
                                  size_t len);

/**
 * # Safety
 * `images` must come from this library or be null.
 */
void mv_images_free(struct MvImages *images);

/**
 * Fuses views into a cloud on a `res`³ grid with the default thresholds.
 *
 * # Safety
 * Handles must be live and `out` valid; `background` may be null.
 */
enum MvStatus mv_reconstruct(const struct MvImages *images,
                             const struct MvCameras *cams,
                             size_t res,
                             const double *background,
                             struct MvCloud **out);

/**
 * Samples views of `scene` through a jittered oracle denoiser (`gamma` 0
 * is exact) with the identity codec and default substitution settings.
 * With `aware` set and `out_cloud` non-null, the fused model is returned
 * there.
 *
 * # Safety
 * Handles must be live, `out_images` valid, `out_cloud` valid or null.
 */
enum MvStatus mv_sample(const struct MvCloud *scene,
                        const struct MvCameras *cams,
                        bool aware,
                        double gamma,
                        size_t n_steps,
                        uint64_t seed,
                        struct MvImages **out_images,
                        struct MvCloud **out_cloud);

/**
 * Mean per-view PSNR.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum MvStatus mv_psnr(const struct MvImages *a, const struct MvImages *b, double *out);

/**
 * Mean per-view SSIM.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum MvStatus mv_ssim(const struct MvImages *a, const struct MvImages *b, double *out);

/**
 * Cyclic flow-warp RMSE at `interval`; `background` may be null.
 *
 * # Safety
 * `images` must be live and `out` valid.
 */
enum MvStatus mv_warp_rmse(const struct MvImages *images,
                           size_t interval,
                           const double *background,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVFUSE_H */
