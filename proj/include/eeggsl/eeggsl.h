/* C interface to the EEG graph-structure-learning library.
 *
 * Objects are opaque handles created by *_load / *_parse / *_default calls
 * and released by the matching *_free. Every fallible call returns an
 * eeggsl_status; on failure eeggsl_last_error() describes the problem for
 * the calling thread. Strings returned through char** outputs are owned by
 * the caller and released with eeggsl_string_free. Structured results are
 * JSON text.
 */
#ifndef EEGGSL_H
#define EEGGSL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define EEGGSL_API __declspec(dllexport)
#else
#define EEGGSL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum eeggsl_status {
  EEGGSL_OK = 0,
  EEGGSL_INVALID_ARGUMENT = 1,
  EEGGSL_SHAPE_MISMATCH = 2,
  EEGGSL_IO = 3,
  EEGGSL_PARSE = 4,
  EEGGSL_NUMERIC_FAILURE = 5,
  EEGGSL_LEAKAGE = 6,
  EEGGSL_UNSUPPORTED = 7,
  EEGGSL_INTERNAL = 99
} eeggsl_status;

typedef struct eeggsl_config eeggsl_config; /* experiment configuration */
typedef struct eeggsl_data eeggsl_data;     /* preprocessed window cache */
typedef struct eeggsl_model eeggsl_model;   /* trained classifier */
typedef struct eeggsl_report eeggsl_report; /* experiment report */

typedef void (*eeggsl_message_fn)(const char* message, void* user);

EEGGSL_API const char* eeggsl_version(void);
EEGGSL_API const char* eeggsl_status_name(eeggsl_status status);
/* Message of the last failed call on this thread, "" if none. */
EEGGSL_API const char* eeggsl_last_error(void);
EEGGSL_API void eeggsl_string_free(char* text);
/* Routes library warnings to `fn` (NULL restores stderr). */
EEGGSL_API void eeggsl_set_warning_handler(eeggsl_message_fn fn, void* user);

/* --- configuration --------------------------------------------------------- */

EEGGSL_API eeggsl_status eeggsl_config_default(eeggsl_config** out);
/* Relative data paths resolve against the file's directory. */
EEGGSL_API eeggsl_status eeggsl_config_load(const char* path, eeggsl_config** out);
EEGGSL_API eeggsl_status eeggsl_config_parse(const char* json_text, eeggsl_config** out);
EEGGSL_API eeggsl_status eeggsl_config_to_json(const eeggsl_config* cfg, char** out);
/* Replaces the seed list with the single `seed`. */
EEGGSL_API eeggsl_status eeggsl_config_set_seed(eeggsl_config* cfg, uint64_t seed);
EEGGSL_API eeggsl_status eeggsl_config_set_workers(eeggsl_config* cfg, size_t workers);
/* Comma-separated ablation names, e.g. "encoder_only,mhgsl_scratch". */
EEGGSL_API eeggsl_status eeggsl_config_set_ablations(eeggsl_config* cfg, const char* names);
/* A directory is read as a window cache, a file as a dataset manifest. */
EEGGSL_API eeggsl_status eeggsl_config_set_data(eeggsl_config* cfg, const char* path);
EEGGSL_API void eeggsl_config_free(eeggsl_config* cfg);

/* --- data ------------------------------------------------------------------- */

/* Synthetic cohort from the config's data.synth block, written as raw tensors
 * plus manifest.json into out_dir. */
EEGGSL_API eeggsl_status eeggsl_synth(const eeggsl_config* cfg, uint64_t seed, const char* out_dir);
/* Manifest -> window cache with the config's data.preprocess block. */
EEGGSL_API eeggsl_status eeggsl_preprocess(const eeggsl_config* cfg, const char* manifest_path,
                                           const char* cache_dir);
/* Data as described by the config's data block. */
EEGGSL_API eeggsl_status eeggsl_data_load(const eeggsl_config* cfg, eeggsl_data** out);
/* {"subjects": [...], "channels": [...], "windows": n, ...} */
EEGGSL_API eeggsl_status eeggsl_data_summary(const eeggsl_data* data, char** out);
EEGGSL_API void eeggsl_data_free(eeggsl_data* data);

/* --- experiments ------------------------------------------------------------ */

/* Fold plans of `seed` as a JSON array. */
EEGGSL_API eeggsl_status eeggsl_fold_plans(const eeggsl_config* cfg, const eeggsl_data* data, uint64_t seed,
                                           char** out);
/* Contrastive pretraining of one fold under out_dir (may be NULL). */
EEGGSL_API eeggsl_status eeggsl_pretrain_fold(const eeggsl_config* cfg, const eeggsl_data* data, uint64_t seed,
                                              size_t fold, const char* out_dir, char** summary);
/* One (ablation, seed, fold) job under out_dir (may be NULL). */
EEGGSL_API eeggsl_status eeggsl_train_fold(const eeggsl_config* cfg, const eeggsl_data* data, const char* ablation,
                                           uint64_t seed, size_t fold, const char* out_dir, char** summary);
/* Every (ablation, seed, fold) job; completed jobs under out_dir are reused.
 * A partial run still returns EEGGSL_OK; query eeggsl_report_partial. */
EEGGSL_API eeggsl_status eeggsl_run_experiment(const eeggsl_config* cfg, const eeggsl_data* data,
                                               const char* out_dir, eeggsl_message_fn progress, void* user,
                                               eeggsl_report** out);
/* Rebuilds and rewrites the report from fold results stored in out_dir. */
EEGGSL_API eeggsl_status eeggsl_report_from_dir(const eeggsl_config* cfg, const eeggsl_data* data,
                                                const char* out_dir, eeggsl_report** out);
EEGGSL_API eeggsl_status eeggsl_report_csv(const eeggsl_report* report, char** out);
/* {"clean": bool, "violations": [...], "warnings": [...]} */
EEGGSL_API eeggsl_status eeggsl_report_audit(const eeggsl_report* report, int* clean, char** out);
EEGGSL_API int eeggsl_report_partial(const eeggsl_report* report);
EEGGSL_API void eeggsl_report_free(eeggsl_report* report);

/* --- trained models --------------------------------------------------------- */

EEGGSL_API eeggsl_status eeggsl_model_load(const char* checkpoint_path, eeggsl_model** out);
/* Metrics over the windows of the listed subjects (comma-separated; NULL or
 * "" selects every subject). */
EEGGSL_API eeggsl_status eeggsl_model_evaluate(eeggsl_model* model, const eeggsl_data* data, const char* subjects,
                                               char** metrics);
/* Group-mean explanations of correctly classified windows for group "pd",
 * "hc" or "both", written as CSV and PGM (plus the mean-attention baseline)
 * into out_dir. */
EEGGSL_API eeggsl_status eeggsl_model_explain(eeggsl_model* model, const eeggsl_data* data, const char* subjects,
                                              const char* group, const char* out_dir, char** summary);
EEGGSL_API void eeggsl_model_free(eeggsl_model* model);

#ifdef __cplusplus
}
#endif

#endif /* EEGGSL_H */
