#include <math.h>
#include <stdio.h>
#include "fixclr.h"

#define CHECK(cond)                                                   \
  do {                                                                \
    if (!(cond)) {                                                    \
      const char *e = fixclr_last_error();                            \
      fprintf(stderr, "line %d: %s\n", __LINE__, e ? e : "(none)");   \
      return 1;                                                       \
    }                                                                 \
  } while (0)

int main(void) {
  double v[4][2] = {{1, 0}, {0, 1}, {0.6, 0.8}, {-0.8, 0.6}};
  size_t dom[4] = {0, 0, 1, 1};
  size_t cls[4] = {0, 1, 0, 1};
  FixclrBatch *b = NULL;
  CHECK(fixclr_batch_new(&v[0][0], 4, 2, dom, cls, NULL, &b) == FIXCLR_STATUS_OK);

  FixclrLossConfig cfg = fixclr_loss_config_default();
  double value = 0, oracle = 0, grad[8];
  uint8_t skipped = 1;
  CHECK(fixclr_loss(b, &cfg, &value, grad, &skipped) == FIXCLR_STATUS_OK);
  CHECK(fixclr_loss_oracle(b, &cfg, &oracle) == FIXCLR_STATUS_OK);
  CHECK(skipped == 0 && fabs(value - oracle) <= 1e-9 * fabs(oracle));
  fixclr_batch_free(b);

  CHECK(fixclr_loss(NULL, NULL, &value, NULL, NULL) == FIXCLR_STATUS_NULL_POINTER);
  CHECK(fixclr_last_error() != NULL);

  FixclrDataset *ds = NULL;
  CHECK(fixclr_dataset_generate_benchmark(3, &ds) == FIXCLR_STATUS_OK);
  CHECK(fixclr_dataset_num_domains(ds) == 4);
  fixclr_dataset_free(ds);

  printf("ok %s %.6f\n", fixclr_version(), value);
  return 0;
}
