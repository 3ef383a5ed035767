// Gradient-space training objective for an ensemble of scalar fields.
//
// Per sample z with flow vector f and field gradients g_1..g_n (all
// unit-normalized):
//
//   conservation:  mean over fields of (f_hat . g_hat_i)^2
//   independence:  mean over pairs i<j of (g_hat_i . g_hat_j)^2
//   total:         conservation + lambda * independence
//
// Samples where |f| or any |g_i| is below the degeneracy floor are skipped
// and counted; a batch with too many skips is a data problem and raises
// NumericError.
#pragma once

#include <vector>

#include "conserva/systems.hpp"

namespace conserva {

struct LossOptions {
  double lambda = 0.02;
  double degenerate_eps = 1e-12;
  double max_skip_fraction = 0.01;
};

struct LossValue {
  double conservation = 0;  // averaged over fields and samples
  double independence = 0;  // averaged over pairs and samples
  Vec per_field;            // per-field conservation terms
  int used = 0;             // samples that entered the averages
  int skipped = 0;
  double total(double lambda) const {
    return conservation + lambda * independence;
  }
};

// f: dim x B flow vectors; g[i]: dim x B gradients of field i.
LossValue ensemble_loss(const Mat& f, const std::vector<Mat>& g,
                        const LossOptions& opt);

// Same, plus dLoss/d(g_i) for every field (columns of skipped samples are
// zero). u[i] comes back sized like g[i].
LossValue ensemble_loss_grad(const Mat& f, const std::vector<Mat>& g,
                             const LossOptions& opt, std::vector<Mat>& u);

}  // namespace conserva
