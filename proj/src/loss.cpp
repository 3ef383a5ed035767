#include "conserva/loss.hpp"

#include "conserva/common.hpp"

namespace conserva {

namespace {

struct Normalized {
  Mat fh;                  // unit flow vectors (zero cols where skipped)
  std::vector<Mat> gh;     // unit gradients
  std::vector<Vec> gnorm;  // original gradient norms
  std::vector<char> ok;    // per-sample usable flag
  int used = 0, skipped = 0;
};

Normalized normalize(const Mat& f, const std::vector<Mat>& g,
                     const LossOptions& opt) {
  const Eigen::Index b = f.cols();
  const int n = static_cast<int>(g.size());
  Normalized nz;
  nz.fh = Mat::Zero(f.rows(), b);
  nz.gh.resize(n);
  nz.gnorm.assign(n, Vec::Zero(b));
  for (int i = 0; i < n; ++i) nz.gh[i] = Mat::Zero(g[i].rows(), b);
  nz.ok.assign(b, 1);
  for (Eigen::Index j = 0; j < b; ++j) {
    const double fn = f.col(j).norm();
    if (fn < opt.degenerate_eps) {
      nz.ok[j] = 0;
      continue;
    }
    for (int i = 0; i < n; ++i) {
      const double gn = g[i].col(j).norm();
      nz.gnorm[i][j] = gn;
      if (gn < opt.degenerate_eps) {
        nz.ok[j] = 0;
        break;
      }
    }
    if (!nz.ok[j]) continue;
    nz.fh.col(j) = f.col(j) / fn;
    for (int i = 0; i < n; ++i) nz.gh[i].col(j) = g[i].col(j) / nz.gnorm[i][j];
  }
  for (Eigen::Index j = 0; j < b; ++j) (nz.ok[j] ? nz.used : nz.skipped)++;
  if (nz.used == 0)
    throw NumericError("loss: every sample in the batch is degenerate");
  if (nz.skipped > opt.max_skip_fraction * static_cast<double>(b))
    throw NumericError("loss: " + std::to_string(nz.skipped) + " of " +
                       std::to_string(b) +
                       " samples degenerate (above the allowed fraction)");
  return nz;
}

LossValue loss_impl(const Mat& f, const std::vector<Mat>& g,
                    const LossOptions& opt, std::vector<Mat>* u) {
  const int n = static_cast<int>(g.size());
  if (n == 0) throw ConfigError("loss: empty ensemble");
  const Eigen::Index b = f.cols();
  for (const Mat& gi : g)
    if (gi.cols() != b || gi.rows() != f.rows())
      throw ConfigError("loss: gradient/flow shape mismatch");

  const Normalized nz = normalize(f, g, opt);

  LossValue out;
  out.per_field = Vec::Zero(n);
  out.used = nz.used;
  out.skipped = nz.skipped;
  const double inv_used = 1.0 / nz.used;

  // Per-column alignment of each gradient with the flow.
  Mat c = Mat::Zero(n, b);
  for (int i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < b; ++j)
      if (nz.ok[j]) c(i, j) = nz.fh.col(j).dot(nz.gh[i].col(j));
    out.per_field[i] = c.row(i).squaredNorm() * inv_used;
  }
  out.conservation = out.per_field.mean();

  // Pairwise gradient alignments.
  const int pairs = n * (n - 1) / 2;
  std::vector<Vec> pd(pairs, Vec::Zero(b));
  double indep = 0;
  int q = 0;
  for (int i = 0; i < n; ++i)
    for (int k = i + 1; k < n; ++k, ++q)
      for (Eigen::Index j = 0; j < b; ++j)
        if (nz.ok[j]) {
          pd[q][j] = nz.gh[i].col(j).dot(nz.gh[k].col(j));
          indep += pd[q][j] * pd[q][j];
        }
  if (pairs > 0) out.independence = indep * inv_used / pairs;

  if (u != nullptr) {
    u->assign(n, Mat());
    for (int i = 0; i < n; ++i) (*u)[i] = Mat::Zero(g[i].rows(), b);
    // Total = (1/n) sum_i cons_i + lambda * (1/pairs) sum_{i<k} pair_ik,
    // each a mean over used samples. Chain through the normalization:
    // d(v_hat)/dv = (I - v_hat v_hat^T)/|v|.
    const double wc = 2.0 * inv_used / n;
    const double wp = pairs > 0 ? 2.0 * opt.lambda * inv_used / pairs : 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
      if (!nz.ok[j]) continue;
      for (int i = 0; i < n; ++i) {
        Vec acc =
            wc * c(i, j) * (nz.fh.col(j) - c(i, j) * nz.gh[i].col(j));
        int p = 0;
        for (int a = 0; a < n; ++a)
          for (int k = a + 1; k < n; ++k, ++p) {
            if (a != i && k != i) continue;
            const int other = (a == i) ? k : a;
            acc += wp * pd[p][j] *
                   (nz.gh[other].col(j) - pd[p][j] * nz.gh[i].col(j));
          }
        (*u)[i].col(j) = acc / nz.gnorm[i][j];
      }
    }
  }
  return out;
}

}  // namespace

LossValue ensemble_loss(const Mat& f, const std::vector<Mat>& g,
                        const LossOptions& opt) {
  return loss_impl(f, g, opt, nullptr);
}

LossValue ensemble_loss_grad(const Mat& f, const std::vector<Mat>& g,
                             const LossOptions& opt, std::vector<Mat>& u) {
  return loss_impl(f, g, opt, &u);
}

}  // namespace conserva
