/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef MODSWAP_H
#define MODSWAP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_ARGUMENT = 2,
  MS_STATUS_MISSING_FILE = 3,
  MS_STATUS_BAD_FORMAT = 4,
  MS_STATUS_LENGTH_MISMATCH = 5,
  MS_STATUS_EMPTY_INDEX = 6,
  MS_STATUS_BUFFER_TOO_SMALL = 7,
  MS_STATUS_IO = 8,
  MS_STATUS_PANIC = 9,
} MsStatus;

/*
 Search space for [`ms_nearest_text`].
 */
typedef enum MsSpace {
  MS_SPACE_TEXT = 0,
  MS_SPACE_SUBSPACE = 1,
} MsSpace;

/*
 Candidate text rows for retrieval.
 */
typedef struct MsIndex MsIndex;

/*
 Fitted correlated-subspace model.
 */
typedef struct MsModel MsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *ms_version(void);

/*
 Copy the calling thread's last error message into `buf`, truncating
 if needed. Returns the length the full message needs, including the
 terminating NUL.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t ms_last_error_message(char *buf, size_t len);

/*
 Load a model file written by `modswap fit`.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MsStatus ms_model_load(const char *path, struct MsModel **out);

/*
 # Safety
 `model` must be null or a handle from [`ms_model_load`] not yet freed.
 */
void ms_model_free(struct MsModel *model);

/*
 Subspace dimension and the two input feature lengths.

 # Safety
 `model` must be a live handle; the outputs must be valid pointers.
 */
enum MsStatus ms_model_dims(const struct MsModel *model,
                            size_t *d,
                            size_t *text_dim,
                            size_t *image_dim);

/*
 Copy the `d` canonical correlations, descending.

 # Safety
 `out` must point to `len` writable doubles.
 */
enum MsStatus ms_model_correlations(const struct MsModel *model, double *out, size_t len);

/*
 Project raw text features (length `text_dim`) to `d` subspace coordinates.

 # Safety
 Buffers must hold the stated number of doubles.
 */
enum MsStatus ms_model_project_text(const struct MsModel *model,
                                    const double *text,
                                    size_t text_len,
                                    double *out,
                                    size_t out_len);

/*
 Project raw image features (length `image_dim`) to `d` subspace coordinates.

 # Safety
 Buffers must hold the stated number of doubles.
 */
enum MsStatus ms_model_project_image(const struct MsModel *model,
                                     const double *image,
                                     size_t image_len,
                                     double *out,
                                     size_t out_len);

/*
 Map raw image features into standardized text-feature space (length `text_dim`).

 # Safety
 Buffers must hold the stated number of doubles.
 */
enum MsStatus ms_model_back_project(const struct MsModel *model,
                                    const double *image,
                                    size_t image_len,
                                    double *out,
                                    size_t out_len);

/*
 Load an index file written by `modswap fit --index-out` or the pipeline.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MsStatus ms_index_load(const char *path, struct MsIndex **out);

/*
 # Safety
 `index` must be null or a handle from [`ms_index_load`] not yet freed.
 */
void ms_index_free(struct MsIndex *index);

/*
 # Safety
 `index` must be a live handle and `len` a valid pointer.
 */
enum MsStatus ms_index_len(const struct MsIndex *index, size_t *len);

/*
 Copy the element id of candidate `row` as a NUL-terminated string.
 Returns `BufferTooSmall` (writing nothing) if `len` cannot hold it.

 # Safety
 `buf` must point to `len` writable bytes.
 */
enum MsStatus ms_index_element_id(const struct MsIndex *index, size_t row, char *buf, size_t len);

/*
 Fixation index recorded for candidate `row`.

 # Safety
 `index` must be a live handle and `out` a valid pointer.
 */
enum MsStatus ms_index_fixation_index(const struct MsIndex *index, size_t row, uint32_t *out);

/*
 Rank the `k` nearest candidate texts for one image query. Writes up to
 `k` candidate rows and distances and the number written to `count`.

 # Safety
 `image` must hold `image_len` doubles; `rows` and `distances` must each
 hold `k` entries; `count` must be valid.
 */
enum MsStatus ms_nearest_text(const struct MsModel *model,
                              const struct MsIndex *index,
                              const double *image,
                              size_t image_len,
                              size_t k,
                              enum MsSpace space,
                              size_t *rows,
                              double *distances,
                              size_t *count);

/*
 Kilobytes of text filling a `width`×`height` screen with `font_px` square glyphs.

 # Safety
 `out` must be a valid pointer.
 */
enum MsStatus ms_screen_text_cost_kb(uint32_t width,
                                     uint32_t height,
                                     uint32_t font_px,
                                     uint32_t bytes_per_char,
                                     uint32_t formatting_bytes_per_char,
                                     double *out);

/*
 Percentage saved by replacing `replaced_kb` of content with `text_kb` of text.

 # Safety
 `out` must be a valid pointer.
 */
enum MsStatus ms_saving_pct(double replaced_kb, double text_kb, double *out);

/*
 Seconds to transfer `kb` kilobytes at `kbps` kilobits per second.

 # Safety
 `out` must be a valid pointer.
 */
enum MsStatus ms_render_time_s(double kb, double kbps, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODSWAP_H */
