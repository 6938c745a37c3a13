/* C interface to the cropadapt library.
 *
 * Every function returns a ca_status. On failure, ca_last_error() returns a
 * message for the calling thread until its next call into the library.
 * Strings returned through char** are heap-allocated and must be released
 * with ca_string_free. Configuration travels as JSON text; a NULL or empty
 * string means "all defaults".
 */
#ifndef CROPADAPT_H
#define CROPADAPT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CA_API __declspec(dllexport)
#else
#define CA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ca_status {
    CA_OK = 0,
    CA_INVALID_ARGUMENT = 1,
    CA_POINT_BEHIND_CAMERA = 2,
    CA_RAY_ABOVE_HORIZON = 3,
    CA_DEGENERATE_VIEW = 4,
    CA_HORIZON_BELOW_BOTTOM = 5,
    CA_TRANSFER_FAILED = 6,
    CA_IO = 7,
    CA_VERSION_MISMATCH = 8,
    CA_MISSING_FILE = 9,
    CA_SCHEMA_VIOLATION = 10,
    CA_SHAPE_MISMATCH = 11,
    CA_EMPTY_DATASET = 12,
    CA_GATE_NOT_PASSED = 13,
    CA_EMPTY_PSEUDO_LABELS = 14,
    CA_OVERLAP_WITH_ADAPTATION_SET = 15,
    CA_MISMATCHED_SETS = 16,
    CA_INTERNAL = 99
} ca_status;

typedef struct ca_dataset ca_dataset;
typedef struct ca_model ca_model;

/* Called once per epoch during source training. */
typedef void (*ca_progress_fn)(int epoch, double loss, void* user);

CA_API const char* ca_version(void);
CA_API const char* ca_status_name(ca_status status);
CA_API const char* ca_last_error(void);
CA_API void ca_string_free(char* s);

CA_API ca_status ca_sha256_hex(const char* data, size_t len, char** out_hex);
CA_API ca_status ca_file_sha256(const char* path, char** out_hex);

/* scene_json: {"rig": {...}, "rows": {...}, "pose_ranges": {...}, "sim": {...}}
 * domain_json: a preset name as a JSON string, or {"preset": name, ...overrides}. */
CA_API ca_status ca_dataset_generate(const char* out_dir, const char* scene_json, const char* domain_json,
                                     size_t count, uint64_t seed, char** out_hash);
CA_API ca_status ca_dataset_hash(const char* dir, char** out_hash);
CA_API ca_status ca_dataset_open(const char* dir, ca_dataset** out);
CA_API void ca_dataset_close(ca_dataset* ds);
CA_API ca_status ca_dataset_size(const ca_dataset* ds, size_t* out);
/* Header of the manifest: version, rig, rows, domain, seed, count. */
CA_API ca_status ca_dataset_info(const ca_dataset* ds, char** out_json);

CA_API ca_status ca_model_init(const char* architecture_json, uint64_t seed, ca_model** out);
CA_API ca_status ca_model_load(const char* path, ca_model** out);
CA_API ca_status ca_model_save(const ca_model* model, const char* path);
CA_API ca_status ca_model_clone(const ca_model* model, ca_model** out);
CA_API void ca_model_free(ca_model* model);
/* Digest of architecture, frozen flags and every parameter value. */
CA_API ca_status ca_model_hash(const ca_model* model, char** out_hash);
CA_API ca_status ca_model_provenance(const ca_model* model, char** out_json);

/* Trains on the left-eye images with the given TrainConfig JSON. The seed
 * overrides the config's seed. out_losses receives a JSON array of epoch
 * losses. */
CA_API ca_status ca_train_source(ca_model* model, const ca_dataset* ds, const char* train_json, uint64_t seed,
                                 ca_progress_fn progress, void* user, char** out_losses);

/* Runs the gated two-stage adaptation on the unlabeled target set. The seed
 * overrides the config's seed; stage1 is "auto", "force" or "skip" and, when
 * non-NULL, overrides the config. The model's provenance records the target
 * sample ids so later evaluation can refuse them. */
CA_API ca_status ca_adapt(ca_model* model, const ca_dataset* target, const char* adapt_json, uint64_t seed,
                          const char* stage1, char** out_report_json, char** out_report_csv);

/* eye is "left" or "right". */
CA_API ca_status ca_eval(ca_model* model, const ca_dataset* labeled, const char* eye, char** out_report_json,
                         char** out_report_csv);

/* Takes two eval reports in JSON form. */
CA_API ca_status ca_compare(const char* before_json, const char* after_json, char** out_text, char** out_csv);

/* Writes overlay PNGs of the first n left-eye samples into out_dir and returns
 * the written file names as a JSON array. */
CA_API ca_status ca_viz(ca_model* model, const ca_dataset* ds, const char* out_dir, size_t n, char** out_files);

#ifdef __cplusplus
}
#endif

#endif
