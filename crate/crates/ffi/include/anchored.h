#ifndef ANCHORED_H
#define ANCHORED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define ANC_ACTIVATION_RELU 0

#define ANC_ACTIVATION_ERF 1

#define ANC_ACTIVATION_RBF 2

#define ANC_ACTIVATION_LINEAR 3

#define ANC_KERNEL_RELU 0

#define ANC_KERNEL_ERF 1

#define ANC_KERNEL_RBF 2

#define ANC_OPTIMIZER_GRADIENT_DESCENT 0

#define ANC_OPTIMIZER_ADAM 1

typedef enum AncStatus {
  ANC_STATUS_OK = 0,
  ANC_STATUS_NULL_POINTER = 1,
  ANC_STATUS_INVALID_ARGUMENT = 2,
  ANC_STATUS_DIMENSION_MISMATCH = 3,
  /**
   * Singular or non-PSD matrices, non-finite values, training divergence.
   */
  ANC_STATUS_NUMERICAL = 4,
  ANC_STATUS_IO = 5,
  /**
   * Malformed files or text.
   */
  ANC_STATUS_FORMAT = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  ANC_STATUS_PANIC = 7,
} AncStatus;

/**
 * Opaque ensemble handle.
 */
typedef struct AncEnsemble AncEnsemble;

/**
 * Opaque fitted-GP handle.
 */
typedef struct AncGp AncGp;

/**
 * Prior variances of an ensemble; see the library's `PriorSpec`.
 */
typedef struct AncPrior {
  double first_layer_var;
  double bias_var;
  double output_layer_var_base;
  double output_bias_var;
  double center_var;
} AncPrior;

typedef struct AncTrainConfig {
  double learning_rate;
  uint64_t epochs;
  /**
   * `ANC_OPTIMIZER_*`
   */
  uint32_t optimizer;
  /**
   * Zero disables early stopping.
   */
  double early_stop_tol;
} AncTrainConfig;

typedef struct AncKernelHyper {
  double weight_var;
  double bias_var;
  double output_var;
  double output_bias_var;
  double center_var;
  double rbf_width_sq;
} AncKernelHyper;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *anc_version(void);

/**
 * Message of the last failed call on this thread, or null when the last call
 * succeeded. The pointer stays valid until the next call on this thread.
 */
const char *anc_last_error_message(void);

/**
 * Prior with every variance set to 1.
 */
struct AncPrior anc_prior_default(void);

struct AncTrainConfig anc_train_config_default(void);

/**
 * Builds an untrained ensemble of `members` networks, each anchored at its
 * own prior draw (seeds `seed`, `seed + 1`, ...). `prior` may be null for
 * unit variances. `rbf_width_sq` is ignored unless the activation is rbf.
 *
 * # Safety
 * `prior` must be null or valid; `out` must be a valid pointer.
 */
enum AncStatus anc_ensemble_new(uint32_t activation,
                                size_t input_dim,
                                size_t hidden_width,
                                double rbf_width_sq,
                                size_t members,
                                const struct AncPrior *prior,
                                double sigma_eps_sq,
                                uint64_t seed,
                                struct AncEnsemble **out);

/**
 * Trains every member on `n` rows of `x` (`n x input_dim`) and `y`.
 * `config` may be null for defaults; `threads == 0` uses all cores.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
enum AncStatus anc_ensemble_train(struct AncEnsemble *ensemble,
                                  const double *x,
                                  const double *y,
                                  size_t n,
                                  const struct AncTrainConfig *config,
                                  size_t threads);

/**
 * Predictive mean, epistemic variance and total variance at `q` rows of
 * `x` (`q x input_dim`). Each output array holds `q` doubles; any of them
 * may be null when not needed.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
enum AncStatus anc_ensemble_predict(const struct AncEnsemble *ensemble,
                                    const double *x,
                                    size_t q,
                                    double *mean,
                                    double *epistemic_var,
                                    double *total_var);

/**
 * Number of members, or 0 for a null handle.
 *
 * # Safety
 * `ensemble` must be null or a live handle.
 */
size_t anc_ensemble_len(const struct AncEnsemble *ensemble);

/**
 * Writes the ensemble into directory `dir` (created if missing).
 *
 * # Safety
 * `ensemble` must be a live handle and `dir` a nul-terminated string.
 */
enum AncStatus anc_ensemble_save(const struct AncEnsemble *ensemble, const char *dir);

/**
 * # Safety
 * `dir` must be a nul-terminated string and `out` a valid pointer.
 */
enum AncStatus anc_ensemble_load(const char *dir, struct AncEnsemble **out);

/**
 * Releases an ensemble; null is ignored.
 *
 * # Safety
 * `ensemble` must be null or a handle not yet freed.
 */
void anc_ensemble_free(struct AncEnsemble *ensemble);

/**
 * Exact GP regression with an infinite-width network kernel on `n` rows of
 * `x` (`n x input_dim`).
 *
 * # Safety
 * Pointers must be valid for the stated sizes; `out` must be valid.
 */
enum AncStatus anc_gp_fit(uint32_t kernel,
                          const struct AncKernelHyper *hyper,
                          const double *x,
                          const double *y,
                          size_t n,
                          size_t input_dim,
                          double noise_var,
                          struct AncGp **out);

/**
 * Predictive mean and epistemic (latent) variance at `q` rows of `x`
 * (`q x input_dim`); either output may be null.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
enum AncStatus anc_gp_predict(const struct AncGp *gp,
                              const double *x,
                              size_t q,
                              size_t input_dim,
                              double *mean,
                              double *epistemic_var);

/**
 * Releases a GP; null is ignored.
 *
 * # Safety
 * `gp` must be null or a handle not yet freed.
 */
void anc_gp_free(struct AncGp *gp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANCHORED_H */
