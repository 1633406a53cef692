#ifndef LHMAPLOC_H
#define LHMAPLOC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define LHM_API __attribute__((visibility("default")))
#else
#define LHM_API
#endif

/* Status codes. Every function returns LHM_OK or one of these; the message of
 * the last failure on the calling thread is available from lhm_last_error(). */
typedef enum lhm_status {
  LHM_OK = 0,
  LHM_INVALID_ARGUMENT = 1,
  LHM_SHAPE = 2,
  LHM_INVALID_DEPTH = 3,
  LHM_DUPLICATE_FRAME = 4,
  LHM_BUDGET_EXCEEDED = 5,
  LHM_EMPTY_MAP = 6,
  LHM_BAD_MAGIC = 7,
  LHM_BAD_VERSION = 8,
  LHM_TRUNCATED = 9,
  LHM_IO = 10,
  LHM_PARSE = 11,
  LHM_DEGENERATE_SAMPLE = 12,
  LHM_DIVERGENCE = 13,
  LHM_MISSING_MODEL = 14,
  LHM_GENERATION = 15,
  LHM_INTERNAL = 99
} lhm_status;

typedef struct lhm_scene lhm_scene; /* synthetic world with trajectory */
typedef struct lhm_map lhm_map;     /* LHMap keyframe point store */
typedef struct lhm_model lhm_model; /* pose-regression checkpoint */

/* Pose as unit quaternion (w, x, y, z) followed by translation (x, y, z);
 * camera-to-world. */
typedef struct lhm_pose {
  double q[4];
  double t[3];
} lhm_pose;

typedef struct lhm_train_config {
  int epochs;
  int batch;
  double lr;
  double lambda;
  double alpha;
  double beta;
  uint32_t topn;
  int noise_level;
  uint64_t seed;
  int draws;
} lhm_train_config;

typedef struct lhm_map_stat {
  uint64_t file_bytes;
  uint64_t records;
  uint64_t points;
  uint32_t point_budget;
  int width;
  int height;
} lhm_map_stat;

typedef struct lhm_timing {
  uint64_t frames;
  int reps;
  double preprocess_ms;
  double inference_ms;
  double total_ms;
  double preprocess_var;
  double inference_var;
  double total_var;
} lhm_timing;

typedef struct lhm_eval_summary {
  uint64_t frames;
  double median_translation_m;
  double median_rotation_deg;
  double mean_translation_m;
  double failure_rate_pct;
  int iterations;
  double iteration_median_translation_m[3];
} lhm_eval_summary;

/* Called once per finished epoch; return non-zero to keep going. */
typedef int (*lhm_epoch_callback)(int epoch, double loss, uint64_t samples, uint64_t skipped, void* user);

LHM_API const char* lhm_version(void);
LHM_API const char* lhm_last_error(void);
LHM_API const char* lhm_status_name(lhm_status status);

/* --- poses ---------------------------------------------------------- */
/* out = gt · N with N drawn uniformly from the ranges of noise level 1, 2 or 3. */
LHM_API lhm_status lhm_perturb_pose(const lhm_pose* gt, int noise_level, uint64_t seed, lhm_pose* out);
/* Translation error (m) and geodesic rotation error (deg) of est against gt. */
LHM_API lhm_status lhm_pose_error(const lhm_pose* est, const lhm_pose* gt, double* translation_m,
                                  double* rotation_deg);

/* --- configuration --------------------------------------------------- */
/* online == 0: offline defaults (120 epochs, batch 8); otherwise online
 * defaults (150 epochs, batch 12). */
LHM_API void lhm_train_config_default(int online, lhm_train_config* out);
/* Overrides *cfg with the key=value file at path. */
LHM_API lhm_status lhm_train_config_load(const char* path, lhm_train_config* cfg);

/* --- synthetic scenes ------------------------------------------------ */
LHM_API lhm_status lhm_scene_generate(uint64_t seed, uint64_t n_points, double extent_m, int n_frames,
                                      lhm_scene** out);
LHM_API lhm_status lhm_scene_load(const char* path, lhm_scene** out);
LHM_API lhm_status lhm_scene_save(const lhm_scene* scene, const char* path);
LHM_API void lhm_scene_free(lhm_scene* scene);
LHM_API lhm_status lhm_scene_info(const lhm_scene* scene, uint64_t* points, int* frames, int* width, int* height);
/* Ground-truth pose of frame k. */
LHM_API lhm_status lhm_scene_pose(const lhm_scene* scene, int frame, lhm_pose* out);
/* Renders the pseudo-RGB image of frame k into rgb (height*width*3 floats in
 * [0, 1], interleaved). */
LHM_API lhm_status lhm_scene_render(const lhm_scene* scene, int frame, float* rgb, size_t rgb_len);

/* --- maps ------------------------------------------------------------ */
LHM_API lhm_status lhm_map_load(const char* path, lhm_map** out);
LHM_API lhm_status lhm_map_save(const lhm_map* map, const char* path);
LHM_API void lhm_map_free(lhm_map* map);
LHM_API lhm_status lhm_map_stat_file(const char* path, lhm_map_stat* out);

/* --- models ---------------------------------------------------------- */
LHM_API lhm_status lhm_model_load(const char* path, lhm_model** out);
LHM_API lhm_status lhm_model_save(const lhm_model* model, const char* path);
LHM_API void lhm_model_free(lhm_model* model);

/* --- training -------------------------------------------------------- */
/* Offline heat-map network training on the scene's frames, then map export.
 * Either output may be NULL. */
LHM_API lhm_status lhm_build_map(const lhm_scene* scene, const lhm_train_config* cfg, lhm_epoch_callback cb,
                                 void* user, lhm_map** map_out, lhm_model** model_out);
/* Online regression training at cfg->noise_level. init may be NULL. */
LHM_API lhm_status lhm_train_online(const lhm_scene* scene, const lhm_map* map, const lhm_train_config* cfg,
                                    const lhm_model* init, lhm_epoch_callback cb, void* user, lhm_model** out);

/* --- localization ---------------------------------------------------- */
/* Refines init with models[0..iters-1] against an RGB image (height*width*3
 * floats in [0, 1]) of the map's camera size. trace, when not NULL, receives
 * iters poses. */
LHM_API lhm_status lhm_localize(const lhm_model* const* models, int n_models, int iters, const lhm_map* map,
                                const float* rgb, int width, int height, const lhm_pose* init, lhm_pose* out,
                                lhm_pose* trace, double* preprocess_ms, double* inference_ms);

/* Localizes every scene frame from its true pose perturbed at noise_level
 * (seeded), writes report.json and PNG plots into out_dir, and fills summary
 * (may be NULL). */
LHM_API lhm_status lhm_evaluate(const lhm_model* const* models, int n_models, int iters, const lhm_map* map,
                                const char* map_path, const lhm_scene* scene, int noise_level, uint64_t seed,
                                const char* out_dir, lhm_eval_summary* summary);

/* Batch-1 timing of pre-processing and inference over the scene frames. */
LHM_API lhm_status lhm_bench(const lhm_model* model, const lhm_map* map, const lhm_scene* scene, int noise_level,
                             uint64_t seed, int reps, lhm_timing* out);

#ifdef __cplusplus
}
#endif

#endif
