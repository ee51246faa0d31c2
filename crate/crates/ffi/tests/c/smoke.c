#include <math.h>
#include <stdio.h>

#include "optidesign.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        enum OdStatus s_ = (call);                                         \
        if (s_ != OD_STATUS_OK) {                                          \
            char msg_[512];                                                \
            od_last_error_message(msg_, sizeof msg_);                      \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_, msg_); \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    const double x[12] = {0.02, 0.02, 0.06, 0.06, 0.11, 0.11, 0.22, 0.22, 0.56, 0.56, 1.10, 1.10};
    const double y[12] = {76, 47, 97, 107, 123, 139, 159, 152, 191, 201, 207, 200};
    const double theta0[2] = {205.0, 0.08};
    OdModel *model = NULL;
    OdDataset *data = NULL;
    OdFit *fit = NULL;
    OdDesign *design = NULL;
    double est[2], pts[2], logdet;
    size_t len = 0;

    CHECK(od_model_from_zoo("michaelis-menten", &model));
    CHECK(od_dataset_new(12, 1, x, y, &data));
    CHECK(od_fit(model, data, theta0, &fit));
    CHECK(od_fit_estimates(fit, est, 2, &len));
    if (len != 2 || fabs(est[0] - 212.68) > 0.5 || fabs(est[1] - 0.064) > 0.001) {
        fprintf(stderr, "unexpected estimates %g %g\n", est[0], est[1]);
        return 1;
    }

    const double guess[2] = {212.68, 0.1};
    CHECK(od_design_initial(model, guess, 2, NULL, NULL, OD_CRITERION_D, 0, &design));
    CHECK(od_design_points(design, pts, 2, &len));
    CHECK(od_design_logdet(design, &logdet));
    if (fabs(pts[0] - 0.085) > 0.005 || fabs(pts[1] - 1.1) > 1e-9 || !isfinite(logdet)) {
        fprintf(stderr, "unexpected design %g %g\n", pts[0], pts[1]);
        return 1;
    }

    OdModel *bad = NULL;
    if (od_model_from_zoo("logistic", &bad) != OD_STATUS_UNKNOWN_MODEL || od_last_error_length() == 0) {
        fprintf(stderr, "unknown model not reported\n");
        return 1;
    }

    od_design_free(design);
    od_fit_free(fit);
    od_dataset_free(data);
    od_model_free(model);
    printf("ok %s\n", od_version());
    return 0;
}
