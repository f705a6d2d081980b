/* C interface to the adaptive length-penalty trainer (leash).
 *
 * Maintained by hand to mirror crates/ffi/src/lib.rs; keep the two in sync.
 *
 * Conventions:
 *  - Opaque handles are created by leash_*_new / leash_*_from_json /
 *    leash_*_default and released by the matching leash_*_free.
 *  - Fallible calls return LeashStatus; on failure, a thread-local message
 *    is available from leash_last_error_message() (free the returned string
 *    with leash_string_free).
 *  - All strings are NUL-terminated UTF-8. Strings returned through out
 *    parameters are owned by the caller and must be released with
 *    leash_string_free.
 *  - Handles are not thread-safe; do not share a handle across threads
 *    without external synchronization.
 */

#ifndef LEASH_H
#define LEASH_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum LeashStatus {
  LEASH_OK = 0,
  LEASH_ERR_NULL_ARG = 1,
  LEASH_ERR_UTF8 = 2,
  LEASH_ERR_PARSE = 3,
  LEASH_ERR_INVALID_CONFIG = 4,
  LEASH_ERR_RUNTIME = 5,
  LEASH_ERR_IO = 6,
  LEASH_ERR_OUT_OF_RANGE = 7,
  LEASH_ERR_PANIC = 8,
} LeashStatus;

typedef enum LeashMetric {
  LEASH_METRIC_SATISFACTION_RATE = 0,
  LEASH_METRIC_LAMBDA = 1,
  LEASH_METRIC_EFFECTIVE_PENALTY = 2,
  LEASH_METRIC_MEAN_LENGTH = 3,
  LEASH_METRIC_MEAN_ACCURACY = 4,
  LEASH_METRIC_MEAN_SHAPED_REWARD = 5,
  LEASH_METRIC_VIOLATION_ESTIMATE = 6,
} LeashMetric;

typedef struct LeashTaskSet LeashTaskSet;
typedef struct LeashTrainConfig LeashTrainConfig;
typedef struct LeashTrainHistory LeashTrainHistory;

/* Library version as a static string; do not free. */
const char *leash_version(void);

/* Most recent failure message on this thread, or NULL. Caller frees. */
char *leash_last_error_message(void);
void leash_string_free(char *s);

/* Task sets. */
LeashStatus leash_task_set_default(LeashTaskSet **out);
LeashStatus leash_task_set_from_json(const char *json, LeashTaskSet **out);
LeashStatus leash_task_set_to_json(const LeashTaskSet *set, char **out);
size_t leash_task_set_len(const LeashTaskSet *set);
void leash_task_set_free(LeashTaskSet *set);

/* Training configurations. */
LeashStatus leash_train_config_new(uint64_t target_length, uint64_t iterations,
                                   uint64_t global_seed,
                                   LeashTrainConfig **out);
LeashStatus leash_train_config_from_json(const char *json,
                                         LeashTrainConfig **out);
LeashStatus leash_train_config_to_json(const LeashTrainConfig *cfg,
                                       char **out);
LeashStatus leash_train_config_set_seed(LeashTrainConfig *cfg, uint64_t seed);
LeashStatus leash_train_config_set_iterations(LeashTrainConfig *cfg,
                                              uint64_t iterations);
/* controller: "adaptive" | "constant" */
LeashStatus leash_train_config_set_controller(LeashTrainConfig *cfg,
                                              const char *controller);
/* penalty: "one_sided" | "two_sided" | "two_sided_clipped" */
LeashStatus leash_train_config_set_penalty(LeashTrainConfig *cfg,
                                           const char *penalty);
void leash_train_config_free(LeashTrainConfig *cfg);

/* Training. metrics_csv_path may be NULL to skip CSV streaming. */
LeashStatus leash_train(const LeashTrainConfig *cfg, const LeashTaskSet *tasks,
                        const char *metrics_csv_path,
                        LeashTrainHistory **out);

/* Training histories. */
size_t leash_history_len(const LeashTrainHistory *history);
LeashStatus leash_history_metric(const LeashTrainHistory *history,
                                 size_t iteration, int metric, double *out);
double leash_history_final_lambda(const LeashTrainHistory *history);
LeashStatus leash_history_policy_json(const LeashTrainHistory *history,
                                      char **out);
void leash_history_free(LeashTrainHistory *history);

/* Keyword counting with the built-in behavior groups. */
LeashStatus leash_count_keywords(const char *text, uint64_t *out_summary,
                                 uint64_t *out_rethink, uint64_t *out_plan);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* LEASH_H */
