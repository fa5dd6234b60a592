#ifndef MMSRAREC_MMSRAREC_H
#define MMSRAREC_MMSRAREC_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MMSR_API
#else
#define MMSR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mmsr_status {
  MMSR_OK = 0,
  MMSR_INVALID_ARGUMENT = 1,
  MMSR_IO = 2,
  MMSR_PARSE = 3,
  MMSR_CORPUS = 4,
  MMSR_BACKEND_UNAVAILABLE = 5,
  MMSR_CAPABILITY = 6,
  MMSR_MISSING_ARTIFACT = 7,
  MMSR_INTERNAL = 8
} mmsr_status;

typedef struct mmsr_pipeline mmsr_pipeline;
typedef struct mmsr_index mmsr_index;

/* Strings returned through `char**` out-parameters are owned by the caller
 * and released with mmsr_string_free. */

MMSR_API const char* mmsr_version(void);
MMSR_API const char* mmsr_status_name(mmsr_status status);
/* Message of the last failing call on this thread; "" if none. */
MMSR_API const char* mmsr_last_error(void);
MMSR_API void mmsr_string_free(char* s);

/* ---- pipeline ---------------------------------------------------------- */

/* config_path and overrides_json may be NULL. Precedence: defaults, config
 * file, MMSRAREC_* environment variables, overrides_json. */
MMSR_API mmsr_status mmsr_pipeline_create(const char* config_path, const char* overrides_json,
                                          mmsr_pipeline** out);
MMSR_API void mmsr_pipeline_destroy(mmsr_pipeline* pipeline);
/* Progress lines go to stderr when verbose is non-zero. */
MMSR_API mmsr_status mmsr_pipeline_set_verbose(mmsr_pipeline* pipeline, int verbose);
MMSR_API mmsr_status mmsr_pipeline_config(const mmsr_pipeline* pipeline, char** config_json);
MMSR_API mmsr_status mmsr_pipeline_run_stage(mmsr_pipeline* pipeline, const char* stage,
                                             int force, char** summary_json);
MMSR_API mmsr_status mmsr_pipeline_run_all(mmsr_pipeline* pipeline, int force,
                                           char** summary_json);
/* param is "n" or "k". */
MMSR_API mmsr_status mmsr_pipeline_sweep(mmsr_pipeline* pipeline, const char* param,
                                         const size_t* values, size_t count, int force,
                                         char** table_json);

/* ---- corpus ------------------------------------------------------------ */

/* Writes items.jsonl and interactions.jsonl into out_dir. users = 0 keeps the
 * profile default. */
MMSR_API mmsr_status mmsr_synth(const char* profile, uint64_t seed, size_t users,
                                const char* out_dir, char** summary_json);

/* ---- utilities --------------------------------------------------------- */

MMSR_API mmsr_status mmsr_tokenize(const char* text, char** tokens_json);

/* Rewards of a "Cover: ...\nContent: ..." summary against item_text under the
 * deterministic mock embedder and scorer. weights_json may be NULL or
 * {"alpha":..,"beta":..,"gamma":..,"recon_clamp":bool}. */
MMSR_API mmsr_status mmsr_reward_breakdown(const char* summary_text, const char* item_text,
                                           const char* weights_json, char** breakdown_json);

MMSR_API mmsr_status mmsr_grpo_advantages(const double* rewards, size_t count,
                                          double std_epsilon, double* advantages_out);

/* Candidate `positive` (0-based) is the held-out item; ranks by descending
 * score, ties by item id. Any output pointer may be NULL. */
MMSR_API mmsr_status mmsr_rank_metrics(const double* scores, const char* const* item_ids,
                                       size_t count, size_t positive, size_t k,
                                       size_t* rank_out, double* hr_out, double* ndcg_out,
                                       double* auc_out);

/* ---- similar-user index ------------------------------------------------ */

/* vectors is row-major count x dim. */
MMSR_API mmsr_status mmsr_index_create(const double* vectors, size_t count, size_t dim,
                                       const char* const* user_ids, const char* encoder_version,
                                       mmsr_index** out);
/* Loads an embeddings file written by the build-index stage. */
MMSR_API mmsr_status mmsr_index_load(const char* embeddings_path, mmsr_index** out);
MMSR_API void mmsr_index_destroy(mmsr_index* index);
MMSR_API size_t mmsr_index_size(const mmsr_index* index);
/* exclude may be NULL. Result: {"neighbors":[{"user_id","similarity"}],
 * "short_result", "degenerate_query"}. */
MMSR_API mmsr_status mmsr_index_query(const mmsr_index* index, const double* query, size_t dim,
                                      size_t k, const char* exclude, char** result_json);

#ifdef __cplusplus
}
#endif

#endif
