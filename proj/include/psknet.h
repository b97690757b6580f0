/* psknet: C interface to the point-cloud classification engine.
 *
 * Every function returns a pskn_status; on failure pskn_last_error() holds a
 * message for the calling thread until the next call. Strings returned
 * through char** outputs are heap copies the caller releases with
 * pskn_string_free. Output pointers may be NULL when the value is unwanted.
 */
#ifndef PSKNET_H
#define PSKNET_H

#include <stdint.h>

#if defined(_WIN32)
#define PSKN_API __declspec(dllexport)
#else
#define PSKN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pskn_status {
  PSKN_OK = 0,
  PSKN_ERROR = 1,  /* pipeline or runtime failure */
  PSKN_EINVAL = 2  /* input, config, or manifest validation failure */
} pskn_status;

PSKN_API const char* pskn_version(void);
PSKN_API const char* pskn_last_error(void);
PSKN_API void pskn_string_free(char* s);

/* Dataset index: an ordered list of (class, instance, split, path). */
typedef struct pskn_index pskn_index;
/* Model: architecture config plus parameter tensors. */
typedef struct pskn_model pskn_model;

/* ---- dataset ------------------------------------------------------- */

/* Walks <root>/<class>/<train|test>/<instance>.off. */
PSKN_API pskn_status pskn_index_scan_root(const char* root, pskn_index** out);
/* Loads an explicit index CSV (class,instance,split,path). */
PSKN_API pskn_status pskn_index_load_csv(const char* path, pskn_index** out);
PSKN_API pskn_status pskn_index_write_csv(const pskn_index* idx,
                                          const char* path);
PSKN_API pskn_status pskn_index_stats_text(const pskn_index* idx, char** out);
PSKN_API void pskn_index_free(pskn_index* idx);

/* Applies a refinement manifest CSV (class,instance,action,target) and
 * reports where every touched instance went. */
PSKN_API pskn_status pskn_refine(const pskn_index* idx,
                                 const char* manifest_path,
                                 pskn_index** refined, char** audit_csv,
                                 char** summary_text);

/* ---- model --------------------------------------------------------- */

/* Builds a model with freshly initialized parameters. config_text is
 * key=value lines layered over the default architecture; NULL or empty
 * keeps the defaults. Trainer keys are tolerated and ignored here. */
PSKN_API pskn_status pskn_model_create(const char* config_text, uint64_t seed,
                                       pskn_model** out);
PSKN_API pskn_status pskn_model_load(const char* checkpoint_path,
                                     pskn_model** out);
PSKN_API pskn_status pskn_model_save(const pskn_model* model,
                                     const char* path);
PSKN_API pskn_status pskn_model_parameter_count(const pskn_model* model,
                                                uint64_t* out);
PSKN_API pskn_status pskn_model_config_text(const pskn_model* model,
                                            char** out);
PSKN_API void pskn_model_free(pskn_model* model);

/* ---- pipeline ------------------------------------------------------ */

typedef void (*pskn_progress_fn)(const char* line, void* user);

/* Runs the training loop on the index's train split. options_text supplies
 * trainer keys (epochs, batch_size, learning_rate, seed, augment,
 * n_points, ...); model keys are tolerated and ignored. On success the
 * model holds the best checkpoint's parameters. A non-NULL out_dir receives
 * train_log.csv, best.ckpt and last.ckpt; log_csv receives the epoch log. */
PSKN_API pskn_status pskn_train(pskn_model* model, const pskn_index* idx,
                                const char* options_text, const char* out_dir,
                                pskn_progress_fn progress, void* user,
                                char** log_csv);

/* Eval pass over one split ("train" or "test"). */
PSKN_API pskn_status pskn_evaluate(pskn_model* model, const pskn_index* idx,
                                   const char* split,
                                   const char* options_text, double* oa,
                                   double* macc, char** confusion_csv);

/* Classifies one file: .off mesh, .pspc point cache, or whitespace x y z
 * lines. Emits top-3 lines "rank,class,score". idx, when given, supplies
 * class names. */
PSKN_API pskn_status pskn_classify_file(pskn_model* model,
                                        const pskn_index* idx,
                                        const char* path,
                                        const char* options_text,
                                        char** top3_text);

/* Trains every ablation variant (augmentation modes and skip modes) with
 * identical seeds and splits; both summary tables come back as CSV and,
 * with a non-NULL out_dir, land in ablation_augmentation.csv and
 * ablation_skip_mode.csv. options_text supplies model and trainer keys. */
PSKN_API pskn_status pskn_ablate(const pskn_index* idx,
                                 const char* options_text,
                                 const char* out_dir,
                                 pskn_progress_fn progress, void* user,
                                 char** augmentation_csv, char** skip_csv);

/* Microbenchmark table: FPS growth, ball-query scan vs grid, stage and full
 * forward, parameter count. */
PSKN_API pskn_status pskn_bench(const char* options_text, char** report_text);

#ifdef __cplusplus
}
#endif

#endif /* PSKNET_H */
