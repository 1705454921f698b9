/* Fits a small anchored ensemble and the matching GP through the C ABI.
 * Build: cc demo.c -I../include ../../../target/release/libanchored_ffi.a -lpthread -ldl -lm */
#include <math.h>
#include <stdio.h>

#include "anchored.h"

#define N 12
#define Q 5

static int check(AncStatus s, const char *what) {
  if (s != ANC_STATUS_OK) {
    fprintf(stderr, "%s failed (%d): %s\n", what, (int)s, anc_last_error_message());
    return 1;
  }
  return 0;
}

int main(void) {
  double x[N], y[N], xq[Q] = {-3.0, -1.0, 0.0, 1.0, 3.0};
  for (int i = 0; i < N; i++) {
    x[i] = -2.0 + 4.0 * i / (N - 1);
    y[i] = sin(2.0 * x[i]);
  }

  AncEnsemble *ens = NULL;
  AncPrior prior = anc_prior_default();
  if (check(anc_ensemble_new(ANC_ACTIVATION_ERF, 1, 50, 1.0, 5, &prior, 0.01, 42, &ens), "ensemble_new")) return 1;

  AncTrainConfig cfg = anc_train_config_default();
  cfg.epochs = 500;
  if (check(anc_ensemble_train(ens, x, y, N, &cfg, 1), "ensemble_train")) return 1;

  double mean[Q], epi[Q], total[Q];
  if (check(anc_ensemble_predict(ens, xq, Q, mean, epi, total), "ensemble_predict")) return 1;

  AncKernelHyper hyper = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  AncGp *gp = NULL;
  if (check(anc_gp_fit(ANC_KERNEL_ERF, &hyper, x, y, N, 1, 0.01, &gp), "gp_fit")) return 1;
  double gp_mean[Q], gp_var[Q];
  if (check(anc_gp_predict(gp, xq, Q, 1, gp_mean, gp_var), "gp_predict")) return 1;

  printf("anchored %s, %zu members\n", anc_version(), anc_ensemble_len(ens));
  for (int i = 0; i < Q; i++)
    printf("x=%+.1f ensemble %+.4f (var %.4f)  gp %+.4f (var %.4f)\n", xq[i], mean[i], epi[i], gp_mean[i], gp_var[i]);

  /* errors are reported through status codes and the last-error message */
  AncStatus bad = anc_ensemble_new(99, 1, 10, 1.0, 1, NULL, 0.01, 0, &ens);
  printf("bad activation -> status %d: %s\n", (int)bad, anc_last_error_message());

  anc_gp_free(gp);
  anc_ensemble_free(ens);
  return bad == ANC_STATUS_INVALID_ARGUMENT ? 0 : 1;
}
