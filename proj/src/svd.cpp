#include "conserva/svd.hpp"

#include <algorithm>
#include <cmath>

#include "conserva/common.hpp"

namespace conserva {

Eigen::VectorXd singular_values(const Eigen::MatrixXd& a, double rel_tol) {
  // Work on the thinner orientation: one-sided Jacobi orthogonalizes
  // columns, and singular values are transpose-invariant.
  Eigen::MatrixXd b = a.rows() >= a.cols() ? a : Eigen::MatrixXd(a.transpose());
  const Eigen::Index n = b.cols();
  if (n == 0) return Eigen::VectorXd();

  constexpr int kMaxSweeps = 60;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double app = b.col(p).squaredNorm();
        const double aqq = b.col(q).squaredNorm();
        const double apq = b.col(p).dot(b.col(q));
        if (std::abs(apq) <= rel_tol * std::sqrt(app * aqq)) continue;
        // When one column has collapsed to rounding noise of the other
        // (norm ratio below machine precision), its direction is arbitrary
        // and re-rotating it just churns noise; the pair is numerically
        // orthogonal already.
        constexpr double kNoiseRatio = 1e-15;
        if (std::min(app, aqq) <=
            kNoiseRatio * kNoiseRatio * std::max(app, aqq))
          continue;
        // Classic stable rotation angle.
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index r = 0; r < b.rows(); ++r) {
          const double bp = b(r, p), bq = b(r, q);
          b(r, p) = c * bp - s * bq;
          b(r, q) = s * bp + c * bq;
        }
        rotated = true;
      }
    }
    if (!rotated) break;
    if (sweep == kMaxSweeps - 1)
      throw NumericError("jacobi svd failed to converge");
  }

  Eigen::VectorXd sv(n);
  for (Eigen::Index i = 0; i < n; ++i) sv[i] = b.col(i).norm();
  std::sort(sv.data(), sv.data() + n, std::greater<double>());
  return sv;
}

}  // namespace conserva
