#ifndef RODEO_RODEO_H
#define RODEO_RODEO_H

#include <stddef.h>
#include <stdint.h>

#if defined(RODEO_BUILDING_LIBRARY)
#define RODEO_API __attribute__((visibility("default")))
#else
#define RODEO_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. Zero is success; the rest mirror rodeo::ErrorCode. */
typedef enum rodeo_status {
  RODEO_OK = 0,
  RODEO_E_INVALID_INPUT = 1,
  RODEO_E_PARSE = 2,
  RODEO_E_IO = 3,
  RODEO_E_NUMERIC = 4,
  RODEO_E_PRECONDITION = 5,
  RODEO_E_TRAINING = 6,
  RODEO_E_GENERATION = 7,
  RODEO_E_LOOKUP = 8,
  RODEO_E_CONFIG = 9,
  RODEO_E_DEGENERATE = 10,
  RODEO_E_INTERNAL = 99
} rodeo_status;

typedef struct rodeo_dataset rodeo_dataset;
typedef struct rodeo_detector rodeo_detector;

RODEO_API const char* rodeo_version(void);
RODEO_API const char* rodeo_status_string(rodeo_status s);
/* Message of the last failure on this thread; "" after a success. */
RODEO_API const char* rodeo_last_error(void);

/* ---- datasets: images in [0,1], C x H x W, labels 1..K ---- */

/* classes: comma-separated glyph families. */
RODEO_API rodeo_status rodeo_dataset_synth(const char* classes, int per_class, int side, uint64_t seed,
                                           rodeo_dataset** out);
RODEO_API rodeo_status rodeo_dataset_load(const char* path, rodeo_dataset** out);
RODEO_API rodeo_status rodeo_dataset_save(const rodeo_dataset* d, const char* path);
RODEO_API size_t rodeo_dataset_size(const rodeo_dataset* d);
RODEO_API size_t rodeo_dataset_dim(const rodeo_dataset* d);
RODEO_API int rodeo_dataset_num_classes(const rodeo_dataset* d);
/* Copies image i into buf (at least dim doubles). */
RODEO_API rodeo_status rodeo_dataset_image(const rodeo_dataset* d, size_t i, double* buf, size_t len);
RODEO_API int rodeo_dataset_label(const rodeo_dataset* d, size_t i);
RODEO_API void rodeo_dataset_free(rodeo_dataset* d);

/* ---- detectors ---- */

RODEO_API rodeo_status rodeo_detector_load(const char* path, rodeo_detector** out);
RODEO_API int rodeo_detector_num_classes(const rodeo_detector* det);
RODEO_API size_t rodeo_detector_dim(const rodeo_detector* det);
/* images: n columns of dim doubles, column-major. scores: n values, higher = more outlier-like. */
RODEO_API rodeo_status rodeo_detector_score(const rodeo_detector* det, const double* images, size_t n, double* scores);
RODEO_API void rodeo_detector_free(rodeo_detector* det);

/* ---- numerics ---- */

/* P(outlier score > inlier score), ties count 1/2. */
RODEO_API rodeo_status rodeo_auroc(const double* inlier, size_t n_in, const double* outlier, size_t n_out,
                                   double* out);
/* Feature matrices are row-major, one sample per row. */
RODEO_API rodeo_status rodeo_fdc(const double* real, size_t n_real, const double* gen, size_t n_gen, size_t dim, int k,
                                 double* fid, double* density, double* coverage, double* fdc);

/* ---- verbs. Output paths may be "-" for stdout; verbose logs to stderr. ---- */

RODEO_API rodeo_status rodeo_theory_sweep(const char* config_path, const char* out_path);
/* validation: comma-separated labels or NULL; tau_text <= 0 derives it. */
RODEO_API rodeo_status rodeo_labels_build(const char* inlier, const char* table, int k, const char* embedder,
                                          const char* validation, double tau_text, uint64_t seed,
                                          const char* out_path);
RODEO_API rodeo_status rodeo_synth(const char* classes, int per_class, int side, uint64_t seed, int synonym_captions,
                                   const char* out_path);
RODEO_API rodeo_status rodeo_embed_train(const char* data, const char* config_path, const char* out_path, int verbose);
RODEO_API rodeo_status rodeo_diffusion_train(const char* data, int T, const char* config_path, const char* out_path,
                                             int verbose);
RODEO_API rodeo_status rodeo_forge_generate(const char* config_path, int verbose);
RODEO_API rodeo_status rodeo_detector_train(const char* config_path, int verbose);
RODEO_API rodeo_status rodeo_attack_run(const char* detector, const char* in, const char* adv_out, double epsilon,
                                        int steps, int restarts, uint64_t seed, const char* csv_out);
RODEO_API rodeo_status rodeo_metrics_fdc(const char* real, const char* gen, const char* extractor, int k,
                                         const char* csv_out);
/* kind: "nd", "osr" or "ood". out_dir may be NULL to use the config's. */
RODEO_API rodeo_status rodeo_run_protocol(const char* kind, const char* config_path, const char* out_dir,
                                          int verbose);
RODEO_API rodeo_status rodeo_report(const char* results_csv, const char* png_out, const char* out_path);

#ifdef __cplusplus
}
#endif

#endif
