/* C interface to the cvp scene-understanding library. */

#ifndef CVP_H
#define CVP_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Training objective.
typedef enum CvpLossKind {
  // Multi-positive contrastive objective with temperature.
  CVP_LOSS_KIND_INFO_NCE = 0,
  // Mean-squared-error regression onto the mean positive embedding.
  CVP_LOSS_KIND_MSE = 1,
} CvpLossKind;

// Result code of every fallible call in this API.
typedef enum CvpStatus {
  // The call succeeded.
  CVP_STATUS_OK = 0,
  // A required pointer argument was NULL.
  CVP_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  CVP_STATUS_INVALID_UTF8 = 2,
  // Reading or writing a file failed.
  CVP_STATUS_IO_ERROR = 3,
  // An input file or in-memory structure is malformed or inconsistent.
  CVP_STATUS_INVALID_DATA = 4,
  // A scalar argument or configuration value is out of range.
  CVP_STATUS_INVALID_ARGUMENT = 5,
  // An internal invariant failed; the library caught a panic.
  CVP_STATUS_PANIC = 6,
} CvpStatus;

// Positive-set supervision variant.
typedef enum CvpVariant {
  // Only each sample's annotated boxes are positive.
  CVP_VARIANT_GT_BOXES = 0,
  // Additionally every object whose category is mentioned in the text.
  CVP_VARIANT_ALL_RELATED_BOXES = 1,
} CvpVariant;

// Per-object pooled embeddings. Opaque; create with `cvp_embed_objects`,
// destroy with `cvp_embeddings_free`.
typedef struct CvpEmbeddings CvpEmbeddings;

// A trained target-affinity head. Opaque; create with `cvp_train_affinity`
// or `cvp_head_load`, destroy with `cvp_head_free`.
typedef struct CvpHead CvpHead;

// A loaded scene: camera views with depth and feature maps, plus annotated
// objects. Opaque; create with `cvp_scene_load` or `cvp_scene_generate`
// and destroy with `cvp_scene_free`.
typedef struct CvpScene CvpScene;

// Parameters for `cvp_scene_generate`.
typedef struct CvpSceneSpec {
  // Number of camera views.
  size_t views;
  // Number of objects.
  size_t objects;
  // Feature channels per pixel (embedding dimension).
  size_t feature_dim;
  // Number of distinct object categories to draw from.
  size_t categories;
  // Standard deviation of the per-channel feature noise.
  double noise_sigma;
  // RNG seed; equal seeds give byte-identical scenes.
  uint64_t seed;
} CvpSceneSpec;

// Parameters for `cvp_train_affinity`.
typedef struct CvpTrainOptions {
  // Full-batch gradient-descent steps.
  size_t steps;
  // Learning rate (> 0).
  double lr;
  // Contrastive softmax temperature (> 0).
  double temperature;
  // Head-initialization RNG seed.
  uint64_t seed;
  enum CvpLossKind loss;
  enum CvpVariant variant;
} CvpTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. Never NULL; empty
// before the first failure. The pointer stays valid until the next failing
// call on the same thread.
const char *cvp_last_error(void);

// Fill `spec` with the default generation parameters.
//
// # Safety
//
// `spec` must be NULL or valid for writes.
enum CvpStatus cvp_scene_spec_default(struct CvpSceneSpec *spec);

// Generate a synthetic scene. The result must be freed with
// `cvp_scene_free`.
//
// # Safety
//
// `spec` must be NULL or point to a `CvpSceneSpec`; `out` must be NULL or
// valid for writes.
enum CvpStatus cvp_scene_generate(const struct CvpSceneSpec *spec, struct CvpScene **out);

// Load a scene directory (`scene.json` plus tensor files). The result must
// be freed with `cvp_scene_free`.
//
// # Safety
//
// `dir` must be NULL or a NUL-terminated string; `out` must be NULL or
// valid for writes.
enum CvpStatus cvp_scene_load(const char *dir, struct CvpScene **out);

// Write the scene to a directory, creating it if necessary.
//
// # Safety
//
// `scene` must be NULL or a live scene handle; `dir` must be NULL or a
// NUL-terminated string.
enum CvpStatus cvp_scene_save(const struct CvpScene *scene, const char *dir);

// Destroy a scene handle. NULL is ignored.
//
// # Safety
//
// `scene` must be NULL or an unfreed scene handle; it is invalid after the
// call.
void cvp_scene_free(struct CvpScene *scene);

// The scene's identifier as a caller-owned string (`cvp_string_free`).
//
// # Safety
//
// `scene` must be NULL or a live scene handle; `out` must be NULL or valid
// for writes.
enum CvpStatus cvp_scene_id(const struct CvpScene *scene, char **out);

// Number of annotated objects in the scene.
//
// # Safety
//
// `scene` must be NULL or a live scene handle; `out` must be NULL or valid
// for writes.
enum CvpStatus cvp_scene_object_count(const struct CvpScene *scene, size_t *out);

// Category name of the object at `index` (insertion order), caller-owned.
//
// # Safety
//
// `scene` must be NULL or a live scene handle; `out` must be NULL or valid
// for writes.
enum CvpStatus cvp_scene_object_category(const struct CvpScene *scene, size_t index, char **out);

// Release a string returned by this library. NULL is ignored.
//
// # Safety
//
// `s` must be NULL or a string returned by this library, freed at most
// once.
void cvp_string_free(char *s);

// Serialize the scene's bird's-eye-view occupancy grid into the text
// prompt. Grid bounds are fitted to the object centers. The string is
// caller-owned (`cvp_string_free`).
//
// # Safety
//
// `scene` must be NULL or a live scene handle; `out` must be NULL or valid
// for writes.
enum CvpStatus cvp_grid_prompt(const struct CvpScene *scene, size_t rows, size_t cols, char **out);

// Back-project every view and pool a feature embedding per object.
// Objects observed by no view carry an all-zero embedding with
// `point_count == 0`.
//
// # Safety
//
// `scene` must be NULL or a live scene handle; `out` must be NULL or valid
// for writes.
enum CvpStatus cvp_embed_objects(const struct CvpScene *scene, struct CvpEmbeddings **out);

// Number of embedded objects. 0 if `embeddings` is NULL.
//
// # Safety
//
// `embeddings` must be NULL or a live embeddings handle.
size_t cvp_embeddings_count(const struct CvpEmbeddings *embeddings);

// Embedding dimensionality (feature channels). 0 if `embeddings` is NULL.
//
// # Safety
//
// `embeddings` must be NULL or a live embeddings handle.
size_t cvp_embeddings_dim(const struct CvpEmbeddings *embeddings);

// Pointer to the row-major `count x dim` embedding matrix. Valid until the
// handle is freed. NULL if `embeddings` is NULL.
//
// # Safety
//
// `embeddings` must be NULL or a live embeddings handle.
const double *cvp_embeddings_values(const struct CvpEmbeddings *embeddings);

// Object id of row `index`.
//
// # Safety
//
// `embeddings` must be NULL or a live embeddings handle; `out` must be
// NULL or valid for writes.
enum CvpStatus cvp_embeddings_object_id(const struct CvpEmbeddings *embeddings,
                                        size_t index,
                                        uint32_t *out);

// Number of back-projected points pooled into row `index` (0 means the
// object was never observed and its embedding is the zero sentinel).
//
// # Safety
//
// `embeddings` must be NULL or a live embeddings handle; `out` must be
// NULL or valid for writes.
enum CvpStatus cvp_embeddings_point_count(const struct CvpEmbeddings *embeddings,
                                          size_t index,
                                          size_t *out);

// Destroy an embeddings handle. NULL is ignored.
//
// # Safety
//
// `embeddings` must be NULL or an unfreed embeddings handle; it is invalid
// after the call.
void cvp_embeddings_free(struct CvpEmbeddings *embeddings);

// Fill `options` with the default training configuration.
//
// # Safety
//
// `options` must be NULL or valid for writes.
enum CvpStatus cvp_train_options_default(struct CvpTrainOptions *options);

// Train a head on a data directory laid out as `samples.jsonl` plus one
// scene directory per referenced scene id. Deterministic for fixed inputs
// and options. The result must be freed with `cvp_head_free`.
//
// # Safety
//
// `data_dir` must be NULL or a NUL-terminated string; `options` must be
// NULL or point to a `CvpTrainOptions`; `out` must be NULL or valid for
// writes.
enum CvpStatus cvp_train_affinity(const char *data_dir,
                                  const struct CvpTrainOptions *options,
                                  struct CvpHead **out);

// Load a head directory written by `cvp_head_save` (or the CLI).
//
// # Safety
//
// `dir` must be NULL or a NUL-terminated string; `out` must be NULL or
// valid for writes.
enum CvpStatus cvp_head_load(const char *dir, struct CvpHead **out);

// Write the head to a directory, creating it if necessary.
//
// # Safety
//
// `head` must be NULL or a live head handle; `dir` must be NULL or a
// NUL-terminated string.
enum CvpStatus cvp_head_save(const struct CvpHead *head, const char *dir);

// Destroy a head handle. NULL is ignored.
//
// # Safety
//
// `head` must be NULL or an unfreed head handle; it is invalid after the
// call.
void cvp_head_free(struct CvpHead *head);

// Rank the scene's observed objects against a text query.
//
// Writes up to `k` results into the caller-provided `ids` and
// `similarities` arrays (each at least `k` long) in descending similarity
// order and stores the number written in `out_count` (the scene may hold
// fewer than `k` observed objects).
//
// # Safety
//
// `head` and `scene` must be NULL or live handles; `query` must be NULL or
// a NUL-terminated string; `ids` and `similarities` must be NULL or valid
// for writes of at least `k` elements; `out_count` must be NULL or valid
// for writes.
enum CvpStatus cvp_retrieve(const struct CvpHead *head,
                            const struct CvpScene *scene,
                            const char *query,
                            size_t k,
                            uint32_t *ids,
                            double *similarities,
                            size_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CVP_H */
