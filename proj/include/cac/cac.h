#ifndef CAC_CAC_H
#define CAC_CAC_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CAC_API __declspec(dllexport)
#elif defined(__GNUC__)
#define CAC_API __attribute__((visibility("default")))
#else
#define CAC_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cac_status {
    CAC_OK = 0,
    CAC_INVALID_ARGUMENT = 1,
    CAC_IO = 2,
    CAC_PARSE = 3,
    CAC_MISSING_MANDATORY_TAG = 10,
    CAC_UNREADABLE_SOURCE = 11,
    CAC_NO_ELIGIBLE_SERIES = 12,
    CAC_INCONSISTENT_GEOMETRY = 13,
    CAC_MISSING_SLICES = 14,
    CAC_DIMS_MISMATCH = 20,
    CAC_UID_MISMATCH = 21,
    CAC_MALFORMED_RUNS = 22,
    CAC_ROI_OUT_OF_BOUNDS = 23,
    CAC_RUNNER_FAILED = 24,
    CAC_INVALID_MODEL_OUTPUT = 25,
    CAC_SAMPLE_TOO_LARGE = 30,
    CAC_NEGATIVE_DURATION = 40,
    CAC_OVERLAPPING_DATASETS = 41,
    CAC_EMPTY_GROUP = 50,
    CAC_NO_EVENTS = 51,
    CAC_DEGENERATE_MARGINALS = 52,
    CAC_ZERO_VARIANCE = 53,
    CAC_UNDEFINED_METRIC = 54,
    CAC_QUEUE_EMPTY = 60,
    CAC_NOT_ASSIGNED = 61,
    CAC_ALREADY_VERDICTED = 62,
    CAC_SLICE_OUT_OF_RANGE = 63,
    CAC_UNKNOWN_ITEM = 64,
    CAC_STAGE_FAILED = 70,
    CAC_BUFFER_TOO_SMALL = 98,
    CAC_INTERNAL = 99
} cac_status;

/* Message of the last failing call on this thread; "" after success. */
CAC_API const char* cac_last_error(void);
CAC_API const char* cac_status_name(cac_status status);
CAC_API const char* cac_version(void);

/*
 * Functions that return text write a NUL-terminated string into `buf`
 * (capacity `cap`). `*needed` (optional) receives the full length including
 * the terminator. When `cap` is too small the call returns
 * CAC_BUFFER_TOO_SMALL and writes nothing; call again with a larger buffer.
 */

typedef struct cac_volume cac_volume;
typedef struct cac_mask cac_mask;
typedef struct cac_score cac_score;
typedef struct cac_review_server cac_review_server;

/* Volumes (fixture directory: `manifest` + `voxels.i16le`). */
CAC_API cac_status cac_volume_load(const char* series_dir, cac_volume** out);
CAC_API void cac_volume_free(cac_volume* v);
CAC_API cac_status cac_volume_dims(const cac_volume* v, int64_t* slices, int64_t* rows, int64_t* cols);
CAC_API cac_status cac_volume_hu(const cac_volume* v, int64_t z, int64_t y, int64_t x, int16_t* out);

/* Masks. `roi` is "z0,y0,x0,z1,y1,x1" (half-open) or NULL for the whole volume. */
CAC_API cac_status cac_mask_load(const char* path, const cac_volume* v, cac_mask** out);
CAC_API cac_status cac_mask_baseline(const cac_volume* v, const char* roi, int hu_threshold, cac_mask** out);
CAC_API cac_status cac_mask_run_external(const cac_volume* v, const char* command, const char* scratch_dir,
                                         int timeout_seconds, cac_mask** out);
CAC_API cac_status cac_mask_save(const cac_mask* m, const char* path);
CAC_API cac_status cac_mask_voxel_count(const cac_mask* m, int64_t* out);
CAC_API void cac_mask_free(cac_mask* m);

/* Scoring. `config_json` may be NULL for defaults. */
CAC_API cac_status cac_score_compute(const cac_volume* v, const cac_mask* m, const char* config_json, cac_score** out);
CAC_API cac_status cac_score_total(const cac_score* s, double* total);
CAC_API cac_status cac_score_rounded(const cac_score* s, int64_t* rounded);
/* Bin index: 0 = zero, 1 = 1-100, 2 = 101-400, 3 = >400. */
CAC_API cac_status cac_score_bin(const cac_score* s, int* bin);
CAC_API cac_status cac_score_json(const cac_score* s, int include_lesions, char* buf, size_t cap, size_t* needed);
CAC_API void cac_score_free(cac_score* s);

CAC_API int cac_bin_of(int64_t rounded);
CAC_API int64_t cac_round_score(double total);
CAC_API int cac_threshold_class(int64_t rounded, int64_t threshold);

/* Report extraction; `rules_json` NULL selects the built-in rule pack. */
CAC_API cac_status cac_extract_agatston(const char* report_text, const char* rules_json, char* buf, size_t cap,
                                        size_t* needed);

/* Statistics on a row-major 4x4 confusion matrix (rows = reference bin). */
CAC_API cac_status cac_weighted_kappa(const int64_t counts[16], double* kappa);

/*
 * Store-level stages. `stage` is one of: ingest, segment, score,
 * extract-reports, pair, split, survival-rows, survival, evaluate,
 * screening-report, therapy-gap, run. `config_json` is a pipeline
 * configuration document, `base_dir` resolves its relative paths (NULL for
 * the working directory), and `options_json` carries per-call options:
 *   {"study": id, "mask": path, "out": dir}
 * The stage summary is written to `buf` as JSON. `*exclusions` (optional)
 * receives the number of studies the stage excluded.
 */
CAC_API cac_status cac_run_stage(const char* stage, const char* store_dir, const char* config_json,
                                 const char* base_dir, uint64_t seed, const char* options_json, char* buf, size_t cap,
                                 size_t* needed, size_t* exclusions);

/* Review service over a store. Port 0 binds a free port. */
CAC_API cac_status cac_review_server_open(const char* store_dir, cac_review_server** out);
CAC_API cac_status cac_review_server_start(cac_review_server* s, const char* host, int port, int* bound_port);
/* Serves on the calling thread until cac_review_server_stop is called from another thread. */
CAC_API cac_status cac_review_server_listen(cac_review_server* s, const char* host, int port);
CAC_API cac_status cac_review_server_stop(cac_review_server* s);
CAC_API void cac_review_server_free(cac_review_server* s);

#ifdef __cplusplus
}
#endif

#endif
