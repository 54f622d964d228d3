#ifndef COLABEL_H
#define COLABEL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ColabelStatus {
  COLABEL_STATUS_OK = 0,
  COLABEL_STATUS_NULL_POINTER = 1,
  COLABEL_STATUS_INVALID_ARGUMENT = 2,
  COLABEL_STATUS_SHAPE_MISMATCH = 3,
  COLABEL_STATUS_IO = 4,
  COLABEL_STATUS_PARSE = 5,
  COLABEL_STATUS_UNCALIBRATED = 6,
  COLABEL_STATUS_INTERNAL = 7,
} ColabelStatus;

/*
 Per-class isotonic calibration maps.
 */
typedef struct ColabelCalibrator ColabelCalibrator;

/*
 A trained data classifier loaded from a JSON checkpoint.
 */
typedef struct ColabelClassifier ColabelClassifier;

/*
 Naive-Bayes confusion matrices, one `classes x classes` matrix per annotator.
 */
typedef struct ColabelConfusionSet ColabelConfusionSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. The pointer is
 valid until the next failing call on the same thread.
 */
const char *colabel_last_error(void);

/*
 Builds a confusion set from `annotators * classes * classes` row-stochastic values.

 # Safety
 `data` must hold `annotators * classes * classes` doubles; `out` must be writable.
 */
enum ColabelStatus colabel_confusion_set_new(const double *data,
                                             size_t annotators,
                                             size_t classes,
                                             struct ColabelConfusionSet **out);

/*
 # Safety
 `set` must be null or a handle from [`colabel_confusion_set_new`] not yet freed.
 */
void colabel_confusion_set_free(struct ColabelConfusionSet *set);

/*
 Naive-Bayes posterior of one annotation row. `row` holds `annotators`
 labels with `-1` for missing; `prior` and `out` hold `classes` values.

 # Safety
 Pointers must reference buffers of the stated sizes.
 */
enum ColabelStatus colabel_nb_posterior(const struct ColabelConfusionSet *set,
                                        const double *prior,
                                        const int64_t *row,
                                        double *out);

/*
 Fuses two class-posterior estimates under `prior`. `degenerate`, if not
 null, receives 1 when the inputs had disjoint support and the uniform
 fallback was used.

 # Safety
 `p_d`, `p_l`, `prior` and `out` must hold `classes` doubles.
 */
enum ColabelStatus colabel_combine(const double *p_d,
                                   const double *p_l,
                                   const double *prior,
                                   size_t classes,
                                   double *out,
                                   int32_t *degenerate);

/*
 Fits per-class isotonic calibration from `n x classes` predictions and
 `n` labels.

 # Safety
 `preds` must hold `n * classes` doubles, `labels` `n` values; `out` must be writable.
 */
enum ColabelStatus colabel_calibrator_fit(const double *preds,
                                          const int64_t *labels,
                                          size_t n,
                                          size_t classes,
                                          struct ColabelCalibrator **out);

/*
 Calibrates `n` prediction rows into `out` (same shape).

 # Safety
 `preds` and `out` must hold `n * classes` doubles for the calibrator's class count.
 */
enum ColabelStatus colabel_calibrator_apply(const struct ColabelCalibrator *cal,
                                            const double *preds,
                                            size_t n,
                                            double *out);

/*
 # Safety
 `cal` must be null or a handle from [`colabel_calibrator_fit`] not yet freed.
 */
void colabel_calibrator_free(struct ColabelCalibrator *cal);

/*
 Expected calibration error in percent over `bins` equal-width bins.

 # Safety
 `preds` must hold `n * classes` doubles and `labels` `n` values.
 */
enum ColabelStatus colabel_ece(const double *preds,
                               const int64_t *labels,
                               size_t n,
                               size_t classes,
                               size_t bins,
                               double *out_percent);

/*
 Loads a classifier checkpoint written by `colabel train`.

 # Safety
 `path` must be a nul-terminated string; `out` must be writable.
 */
enum ColabelStatus colabel_classifier_load(const char *path, struct ColabelClassifier **out);

/*
 Class probabilities for `n` rows of `dim` features into `out` (`n x classes`).

 # Safety
 `features` must hold `n * dim` doubles and `out` `n * classes` doubles.
 */
enum ColabelStatus colabel_classifier_predict(const struct ColabelClassifier *clf,
                                              const double *features,
                                              size_t n,
                                              size_t dim,
                                              double *out);

/*
 # Safety
 `clf` must be a live handle.
 */
size_t colabel_classifier_classes(const struct ColabelClassifier *clf);

/*
 # Safety
 `clf` must be a live handle.
 */
size_t colabel_classifier_feature_dim(const struct ColabelClassifier *clf);

/*
 # Safety
 `clf` must be null or a handle from [`colabel_classifier_load`] not yet freed.
 */
void colabel_classifier_free(struct ColabelClassifier *clf);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COLABEL_H */
