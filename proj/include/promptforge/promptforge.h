#ifndef PROMPTFORGE_H
#define PROMPTFORGE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PF_API __declspec(dllexport)
#else
#define PF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pf_status {
  PF_OK = 0,
  PF_BAD_MAGIC,
  PF_VERSION_MISMATCH,
  PF_TRUNCATED_PAYLOAD,
  PF_DUPLICATE_NAME,
  PF_NON_FINITE_INPUT,
  PF_AFFINE_SINGULAR,
  PF_TAPE_MISMATCH,
  PF_SHAPE_MISMATCH,
  PF_SCALE_OUT_OF_RANGE,
  PF_EMPTY_SPLIT,
  PF_CLASS_MISMATCH,
  PF_BAD_CLASS_COUNT,
  PF_DIMENSION_MISMATCH,
  PF_COUNT_MISMATCH,
  PF_DEGENERATE_SPLIT,
  PF_EMPTY_KINDS,
  PF_INVALID_ARGUMENT,
  PF_IO_ERROR,
  PF_CONFIG_ERROR,
  PF_INTERNAL_ERROR = 100
} pf_status;

/* Process exit codes returned by pf_run. */
enum { PF_EXIT_OK = 0, PF_EXIT_CHECK_FAILED = 1, PF_EXIT_USAGE = 2, PF_EXIT_RUNTIME = 3 };

typedef struct pf_config pf_config;
typedef struct pf_model pf_model;
typedef struct pf_prompt pf_prompt;

PF_API const char* pf_status_name(pf_status s);
/* Message of the last failing call on this thread; empty when none. */
PF_API const char* pf_last_error(void);

/* Configuration: flat key=value settings. */
PF_API pf_status pf_config_new(pf_config** out);
PF_API void pf_config_free(pf_config* cfg);
PF_API pf_status pf_config_set(pf_config* cfg, const char* key, const char* value);
/* Copies the value (NUL-terminated) into buf; *needed receives the full
   length including the terminator. */
PF_API pf_status pf_config_get(const pf_config* cfg, const char* key, char* buf, size_t cap, size_t* needed);
PF_API int pf_config_is_set(const pf_config* cfg, const char* key);
PF_API pf_status pf_config_load(pf_config* cfg, const char* path);
/* Takes the seed from PROMPTFORGE_SEED unless one was set explicitly. */
PF_API pf_status pf_config_apply_env(pf_config* cfg);

PF_API size_t pf_config_key_count(void);
PF_API const char* pf_config_key_name(size_t i);
PF_API const char* pf_config_key_default(size_t i);
PF_API const char* pf_config_key_help(size_t i);

PF_API size_t pf_command_count(void);
PF_API const char* pf_command_name(size_t i);
/* Runs a command and returns its exit code (PF_EXIT_*). */
PF_API int pf_run(const char* command, const pf_config* cfg);

/* Frozen classifier. */
PF_API pf_status pf_model_load(const char* path, pf_model** out);
PF_API pf_status pf_model_random(int num_classes, uint64_t seed, pf_model** out);
PF_API void pf_model_free(pf_model* m);
PF_API int pf_model_num_classes(const pf_model* m);
PF_API uint64_t pf_model_checksum(const pf_model* m);
/* image: planar 3 x height x width floats; logits: num_classes doubles. */
PF_API pf_status pf_model_forward(const pf_model* m, const float* image, int height, int width, double* logits);

/* Prompts. variant: "acavp", "vp", "evp" or "autovp". */
PF_API pf_status pf_prompt_new(const char* variant, int height, int width, pf_prompt** out);
PF_API pf_status pf_prompt_load(const char* path, pf_prompt** out);
PF_API pf_status pf_prompt_save(const pf_prompt* p, const char* path);
PF_API void pf_prompt_free(pf_prompt* p);
PF_API pf_status pf_prompt_apply(const pf_prompt* p, const float* image, int height, int width, float* out);

#ifdef __cplusplus
}
#endif

#endif
