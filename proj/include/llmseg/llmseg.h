/* C interface to the llmseg shared library.
 *
 * Every function returns an llmseg_status. On failure the message of the most
 * recent error on the calling thread is available from llmseg_last_error().
 * Strings handed out through char** parameters are owned by the caller and
 * released with llmseg_string_free(). Handles are released with their
 * matching *_free function; passing NULL to a free function is a no-op. */
#ifndef LLMSEG_H
#define LLMSEG_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define LLMSEG_API __declspec(dllexport)
#else
#define LLMSEG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum llmseg_status {
    LLMSEG_OK = 0,
    LLMSEG_INVALID_ARGUMENT,
    LLMSEG_DIMENSION_MISMATCH,
    LLMSEG_LENGTH_MISMATCH,
    LLMSEG_INVALID_SIZE,
    LLMSEG_EMPTY_INPUT,
    LLMSEG_PARSE_ERROR,
    LLMSEG_SCHEMA_VERSION_MISMATCH,
    LLMSEG_SHAPE_MISMATCH,
    LLMSEG_VERSION_MISMATCH,
    LLMSEG_IO_ERROR,
    LLMSEG_INVALID_TEMPERATURE,
    LLMSEG_INVALID_HEAD_COUNT,
    LLMSEG_INVALID_SCHEDULE,
    LLMSEG_MISSING_GRADIENT,
    LLMSEG_NON_FINITE_EVALUATION,
    LLMSEG_NON_FINITE_LOSS,
    LLMSEG_EMPTY_PROPOSAL_SET,
    LLMSEG_INDEX_OUT_OF_RANGE,
    LLMSEG_UNKNOWN_STRATEGY,
    LLMSEG_INVALID_CONFIG,
    LLMSEG_DATA_MISSING,
    LLMSEG_CORPUS_TOO_SMALL,
    LLMSEG_INVALID_TEMPLATE,
    LLMSEG_EMPTY_OBJECTS,
    LLMSEG_NO_QUESTIONS_FOUND,
    LLMSEG_NO_VALID_PAIRS,
    LLMSEG_PROVIDER_UNAVAILABLE,
    LLMSEG_MALFORMED_RESPONSE,
    LLMSEG_INTERNAL_ERROR
} llmseg_status;

typedef struct llmseg_mask llmseg_mask;
typedef struct llmseg_proposals llmseg_proposals;
typedef struct llmseg_model llmseg_model;

LLMSEG_API const char* llmseg_version(void);
LLMSEG_API const char* llmseg_status_name(llmseg_status status);
/* Thread-local; valid until the next failing call on the same thread. */
LLMSEG_API const char* llmseg_last_error(void);
LLMSEG_API void llmseg_string_free(char* text);

/* ---- masks ------------------------------------------------------------ */

/* pixels: h*w bytes, row-major, nonzero = foreground. */
LLMSEG_API llmseg_status llmseg_mask_create(uint32_t h, uint32_t w, const uint8_t* pixels, llmseg_mask** out);
/* Mask JSON: {"h", "w", "counts"} with column-major uncompressed RLE. */
LLMSEG_API llmseg_status llmseg_mask_from_json(const char* text, llmseg_mask** out);
LLMSEG_API llmseg_status llmseg_mask_load(const char* path, llmseg_mask** out);
LLMSEG_API void llmseg_mask_free(llmseg_mask* mask);
LLMSEG_API llmseg_status llmseg_mask_shape(const llmseg_mask* mask, uint32_t* h, uint32_t* w);
LLMSEG_API llmseg_status llmseg_mask_area(const llmseg_mask* mask, uint64_t* area);
/* pixels must hold h*w bytes; written as 0/1. */
LLMSEG_API llmseg_status llmseg_mask_pixels(const llmseg_mask* mask, uint8_t* pixels, size_t capacity);
LLMSEG_API llmseg_status llmseg_mask_to_json(const llmseg_mask* mask, char** out);
LLMSEG_API llmseg_status llmseg_mask_iou(const llmseg_mask* a, const llmseg_mask* b, double* out);
/* |gt ∩ pred| / |pred|; 0 for an empty prediction. */
LLMSEG_API llmseg_status llmseg_mask_iop(const llmseg_mask* gt, const llmseg_mask* pred, double* out);
/* Binary PGM, foreground 255. */
LLMSEG_API llmseg_status llmseg_mask_render_pgm(const llmseg_mask* mask, const char* path);

/* ---- proposals -------------------------------------------------------- */

LLMSEG_API llmseg_status llmseg_proposals_load(const char* path, llmseg_proposals** out);
LLMSEG_API llmseg_status llmseg_proposals_save(const llmseg_proposals* set, const char* path);
LLMSEG_API void llmseg_proposals_free(llmseg_proposals* set);
LLMSEG_API llmseg_status llmseg_proposals_count(const llmseg_proposals* set, size_t* count);
/* Copy of the mask of proposal `index`. */
LLMSEG_API llmseg_status llmseg_proposals_mask(const llmseg_proposals* set, size_t index, llmseg_mask** out);
LLMSEG_API llmseg_status llmseg_proposals_predicted_iou(const llmseg_proposals* set, size_t index, double* out);
/* Filter by predicted IoU ≥ iou_filter, then greedy NMS at nms_threshold,
 * then truncate to max_proposals (0 keeps everything). */
LLMSEG_API llmseg_status llmseg_proposals_postprocess(const llmseg_proposals* set, double iou_filter,
                                                      double nms_threshold, size_t max_proposals,
                                                      llmseg_proposals** out);

/* ---- model ------------------------------------------------------------ */

LLMSEG_API llmseg_status llmseg_model_load(const char* path, llmseg_model** out);
LLMSEG_API llmseg_status llmseg_model_save(const llmseg_model* model, const char* path);
LLMSEG_API void llmseg_model_free(llmseg_model* model);
LLMSEG_API llmseg_status llmseg_model_config_json(const llmseg_model* model, char** out);
/* embeddings: k*dim row-major; seg: dim. similarities and iop_predictions
 * receive k values each. */
LLMSEG_API llmseg_status llmseg_model_forward(const llmseg_model* model, const double* embeddings, size_t k,
                                              const double* seg, size_t dim, double* similarities,
                                              double* iop_predictions);

/* ---- harness ---------------------------------------------------------- */

/* synth_config_json may be NULL for the defaults. */
LLMSEG_API llmseg_status llmseg_synth(size_t n, uint64_t seed, const char* synth_config_json, const char* out_dir);
/* run_config_json mirrors the RunConfig field names. summary_json may be
 * NULL; otherwise receives {"steps", "first_total", "last_total", ...}. */
LLMSEG_API llmseg_status llmseg_train(const char* run_config_json, const char* checkpoint_path, const char* log_path,
                                      char** summary_json);
/* predictions_path may be NULL. report_path may be NULL. */
LLMSEG_API llmseg_status llmseg_evaluate(const char* checkpoint_path, const char* data_dir, const char* strategy,
                                         double iop_threshold, size_t norm_size, size_t threads,
                                         const char* report_path, const char* predictions_path, char** report_json);
LLMSEG_API llmseg_status llmseg_metrics_from_predictions(const char* predictions_path, size_t norm_size,
                                                         char** report_json);
/* *passed is 1 when every block is within tolerance. */
LLMSEG_API llmseg_status llmseg_gradcheck(uint64_t seed, char** report_json, int* passed);

/* ---- dataset pipeline ------------------------------------------------- */

LLMSEG_API llmseg_status llmseg_dataset_synth_corpus(size_t n, uint64_t seed, const char* out_path);
/* Writes the selection as JSON {"simple", "complex", "egocentric"}. */
LLMSEG_API llmseg_status llmseg_dataset_sample(const char* config_json, const char* corpus_path, const char* out_path);
/* provider: "mock:<seed>" or "http". template_path may be NULL for the
 * bundled template. Writes JSON-lines prompt results. */
LLMSEG_API llmseg_status llmseg_dataset_prompts(const char* config_json, const char* corpus_path,
                                                const char* selection_path, const char* provider,
                                                const char* template_path, const char* out_path);
/* Writes the manifest; diagnostics_json (may be NULL) receives an array of
 * strings describing dropped pairs and records. */
LLMSEG_API llmseg_status llmseg_dataset_assemble(const char* config_json, const char* corpus_path,
                                                 const char* prompts_path, const char* out_path,
                                                 char** diagnostics_json);
/* stats_text (may be NULL) receives the two-decimal display form. */
LLMSEG_API llmseg_status llmseg_dataset_stats(const char* manifest_path, char** stats_json, char** stats_text);
/* sample → prompts → assemble in one call. */
LLMSEG_API llmseg_status llmseg_dataset_run(const char* config_json, const char* corpus_path, const char* provider,
                                            const char* template_path, const char* out_path);

#ifdef __cplusplus
}
#endif

#endif
