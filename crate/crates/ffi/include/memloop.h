#ifndef MEMLOOP_H
#define MEMLOOP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum MlStatus {
  ML_STATUS_OK = 0,
  ML_STATUS_INVALID_INPUT = 1,
  ML_STATUS_CONFLICT = 2,
  ML_STATUS_NOT_FOUND = 3,
  ML_STATUS_NUMERIC = 4,
  ML_STATUS_DEGENERATE_GEOMETRY = 5,
  ML_STATUS_NON_WATERTIGHT = 6,
  ML_STATUS_CONSTRUCTION = 7,
  ML_STATUS_INVALID_COMPARISON = 8,
  ML_STATUS_PARSE = 9,
  ML_STATUS_IO = 10,
  ML_STATUS_NULL_POINTER = 11,
  ML_STATUS_PANIC = 12,
} MlStatus;

typedef enum MlMode {
  ML_MODE_LEARNED = 0,
  ML_MODE_SEMANTIC = 1,
} MlMode;

typedef enum MlPhase {
  ML_PHASE_TRAIN = 0,
  ML_PHASE_EVAL = 1,
} MlPhase;

/**
 * Opaque simulation handle.
 */
typedef struct MlSimulation MlSimulation;

/**
 * Opaque skill store handle.
 */
typedef struct MlSkillStore MlSkillStore;

/**
 * Aggregate process metrics. `avg_re` is meaningful only when
 * `avg_re_defined` is non-zero.
 */
typedef struct MlMetrics {
  size_t n_samples;
  double suc;
  double pass_at_1;
  double avg_re;
  uint8_t avg_re_defined;
} MlMetrics;

/**
 * Geometry scores. `iou` is meaningful only when `iou_defined` is non-zero.
 */
typedef struct MlComparison {
  double iou;
  double chamfer;
  double hausdorff;
  uint8_t iou_defined;
} MlComparison;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *ml_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ml_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ml_string_free(char *s);

/**
 * Builds a simulation from an experiment config JSON (null for defaults).
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be a
 * valid pointer.
 */
enum MlStatus ml_sim_new(const char *config_json,
                         enum MlMode mode,
                         uint64_t seed,
                         struct MlSimulation **out);

/**
 * Runs `episodes` episodes in the given phase.
 *
 * # Safety
 * `sim` must be a live handle from [`ml_sim_new`].
 */
enum MlStatus ml_sim_run(struct MlSimulation *sim, size_t episodes, enum MlPhase phase);

/**
 * Number of outcomes recorded so far.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t ml_sim_len(const struct MlSimulation *sim);

/**
 * Metrics over the outcomes of one phase.
 *
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum MlStatus ml_sim_metrics(const struct MlSimulation *sim,
                             enum MlPhase phase,
                             struct MlMetrics *out);

/**
 * The outcome log as JSONL; free with [`ml_string_free`].
 *
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum MlStatus ml_sim_outcomes_jsonl(const struct MlSimulation *sim, char **out);

/**
 * Writes the outcome log and final stores into `dir`.
 *
 * # Safety
 * `sim` must be a live handle and `dir` a NUL-terminated string.
 */
enum MlStatus ml_sim_save(const struct MlSimulation *sim, const char *dir);

/**
 * # Safety
 * `sim` must be null or a handle not yet freed.
 */
void ml_sim_free(struct MlSimulation *sim);

/**
 * Loads a skill store from JSONL.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MlStatus ml_skills_load(const char *path, struct MlSkillStore **out);

/**
 * Applies reward `reward` (0 or 1) to each called skill id. Known ids are
 * updated even when some are unknown; the call then returns
 * `NotFound`.
 *
 * # Safety
 * `store` must be a live handle; `ids` must point to `n` NUL-terminated
 * strings; `hyper_json` may be null.
 */
enum MlStatus ml_skills_update(struct MlSkillStore *store,
                               const char *const *ids,
                               size_t n,
                               uint8_t reward,
                               const char *hyper_json);

/**
 * Current utility of one skill.
 *
 * # Safety
 * `store` must be a live handle, `id` a NUL-terminated string and `out` a
 * valid pointer.
 */
enum MlStatus ml_skills_utility(const struct MlSkillStore *store, const char *id, double *out);

/**
 * # Safety
 * `store` must be a live handle and `path` a NUL-terminated string.
 */
enum MlStatus ml_skills_save(const struct MlSkillStore *store, const char *path);

/**
 * # Safety
 * `store` must be null or a handle not yet freed.
 */
void ml_skills_free(struct MlSkillStore *store);

/**
 * Normalizes both models, samples `points` per mesh surface and scores
 * them.
 *
 * # Safety
 * Paths must be NUL-terminated strings and `out` a valid pointer.
 */
enum MlStatus ml_geo_compare(const char *generated,
                             const char *reference,
                             size_t points,
                             size_t resolution,
                             uint64_t seed,
                             struct MlComparison *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEMLOOP_H */
