#include "conserva/rank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "conserva/common.hpp"
#include "conserva/svd.hpp"

namespace conserva {

namespace {

constexpr std::uint64_t kSubsampleStream = 0x5ab;
constexpr std::uint64_t kDirectionStream = 0xd1a;

// Seeded subsample of column indices (all of them when P <= want).
std::vector<int> subsample(Eigen::Index total, int want, std::uint64_t seed,
                           std::uint64_t stream) {
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  if (total <= want) return idx;
  RngStream rng(seed, stream);
  for (int i = 0; i < want; ++i) {
    const auto j = i + static_cast<int>(rng.below(total - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(want);
  return idx;
}

int rank_from_singulars(const Vec& sv, double tol) {
  const double total = sv.squaredNorm();
  if (total <= 0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] * sv[i] / total >= tol) ++r;
  return r;
}

}  // namespace

ScalarField field_from_cq(const AnalyticCq& cq) {
  return {cq.label, cq.value, cq.grad};
}

Mat gradient_matrix(const std::vector<ScalarField>& fields, const Vec& z,
                    double degenerate_eps) {
  Mat b(z.size(), static_cast<Eigen::Index>(fields.size()));
  for (std::size_t i = 0; i < fields.size(); ++i) {
    Vec g = fields[i].grad(z);
    const double n = g.norm();
    if (n < degenerate_eps)
      throw NumericError("gradient_matrix: degenerate gradient for field '" +
                         fields[i].label + "'");
    b.col(static_cast<Eigen::Index>(i)) = g / n;
  }
  return b;
}

int differential_rank(const std::vector<ScalarField>& fields,
                      const Mat& states, const RankConfig& cfg) {
  if (fields.empty()) throw ConfigError("differential_rank: no fields");
  if (states.cols() == 0) throw ConfigError("differential_rank: no states");
  const auto idx =
      subsample(states.cols(), cfg.eval_points, cfg.seed, kSubsampleStream);
  int best = 0;
  int degenerate = 0;
  for (int j : idx) {
    Mat b;
    try {
      b = gradient_matrix(fields, states.col(j), cfg.degenerate_eps);
    } catch (const NumericError&) {
      ++degenerate;
      continue;
    }
    best = std::max(best, rank_from_singulars(singular_values(b), cfg.sv_tol));
    if (best == static_cast<int>(fields.size())) break;  // cannot grow further
  }
  if (degenerate == static_cast<int>(idx.size()))
    throw NumericError("differential_rank: all evaluation points degenerate");
  return best;
}

Vec differential_spectrum(const std::vector<ScalarField>& fields,
                          const Mat& states, const RankConfig& cfg) {
  if (fields.empty()) throw ConfigError("differential_spectrum: no fields");
  if (states.cols() == 0) throw ConfigError("differential_spectrum: no states");
  const auto idx =
      subsample(states.cols(), cfg.eval_points, cfg.seed, kSubsampleStream);
  int best = -1;
  Vec spectrum;
  for (int j : idx) {
    Mat b;
    try {
      b = gradient_matrix(fields, states.col(j), cfg.degenerate_eps);
    } catch (const NumericError&) {
      continue;
    }
    const Vec sv = singular_values(b);
    Vec frac = sv.array().square();
    const double tot = frac.sum();
    if (tot > 0) frac /= tot;
    const int r = rank_from_singulars(sv, cfg.sv_tol);
    if (r > best) {
      best = r;
      spectrum = frac;
      if (best == static_cast<int>(fields.size())) break;
    }
  }
  if (best < 0)
    throw NumericError("differential_spectrum: all evaluation points degenerate");
  return spectrum;
}

ManifoldResult manifold_rank(const Mat& values, const ManifoldConfig& cfg) {
  const Eigen::Index p = values.rows();
  const Eigen::Index n = values.cols();
  if (p < n + 1) throw ConfigError("manifold_rank: not enough points");
  if (cfg.scales < 2) throw ConfigError("manifold_rank: need >= 2 scales");

  // Column-standardize; a constant column carries no geometry and stays zero.
  Mat v = values;
  for (Eigen::Index c = 0; c < n; ++c) {
    const double mean = v.col(c).mean();
    v.col(c).array() -= mean;
    const double sd = std::sqrt(v.col(c).squaredNorm() / p);
    if (sd > 0) v.col(c) /= sd;
  }

  const auto anchors = subsample(p, cfg.anchors, cfg.seed, kSubsampleStream);

  ManifoldResult res;
  const double base = std::sqrt(static_cast<double>(n));
  for (int k = 0; k < cfg.scales; ++k) {
    const double g =
        cfg.scale_min *
        std::pow(cfg.scale_max / cfg.scale_min, k / double(cfg.scales - 1));
    res.scale.push_back(base * g);
  }
  res.n_eff.assign(cfg.scales, 0.0);
  res.valid.assign(cfg.scales, 1);

  std::vector<double> d2(p);
  for (int k = 0; k < cfg.scales; ++k) {
    const double r2 = res.scale[k] * res.scale[k];
    double acc = 0;
    for (int a : anchors) {
      // Gather the neighborhood of the anchor.
      std::vector<int> nb;
      for (Eigen::Index i = 0; i < p; ++i) {
        if ((v.row(i) - v.row(a)).squaredNorm() <= r2) nb.push_back(i);
      }
      if (static_cast<Eigen::Index>(nb.size()) < n + 1) {
        res.valid[k] = 0;
        break;
      }
      Mat local(nb.size(), n);
      for (std::size_t i = 0; i < nb.size(); ++i) local.row(i) = v.row(nb[i]);
      local.rowwise() -= local.colwise().mean();
      // Eigenvalues of the local scatter matrix are the squared singular
      // values of the centered block, so the explained-variance ratios match
      // a direct PCA while staying O(n^2) per neighborhood row.
      const Mat scatter = local.transpose() * local;
      const Vec lambda = singular_values(scatter);
      const double total = lambda.sum();
      int r = 0;
      if (total > 0)
        for (Eigen::Index i = 0; i < lambda.size(); ++i)
          if (lambda[i] / total >= cfg.var_tol) ++r;
      acc += r;
    }
    if (res.valid[k]) res.n_eff[k] = acc / anchors.size();
  }

  // Longest plateau of the rounded estimate across valid scales; ties go to
  // the smaller dimension.
  int best_len = 0, best_val = 0;
  int run_len = 0, run_val = -1;
  for (int k = 0; k < cfg.scales; ++k) {
    if (!res.valid[k]) {
      run_len = 0;
      run_val = -1;
      continue;
    }
    const int r = static_cast<int>(std::lround(res.n_eff[k]));
    if (r == run_val) {
      ++run_len;
    } else {
      run_val = r;
      run_len = 1;
    }
    if (run_len > best_len || (run_len == best_len && run_val < best_val)) {
      best_len = run_len;
      best_val = run_val;
    }
  }
  if (best_len == 0)
    throw NumericError("manifold_rank: no scale had full neighborhoods");
  res.rank = best_val;
  res.plateau_length = best_len;
  return res;
}

namespace {

// Shared point selection for the independence tests.
std::vector<int> indep_points(const Mat& states, const IndependenceConfig& cfg) {
  return subsample(states.cols(), cfg.test_points, cfg.seed, kSubsampleStream);
}

}  // namespace

bool independent_method_a(const std::vector<ScalarField>& accepted,
                          const ScalarField& candidate, const Mat& states,
                          const IndependenceConfig& cfg) {
  std::vector<ScalarField> all = accepted;
  all.push_back(candidate);
  for (int j : indep_points(states, cfg)) {
    Mat b;
    try {
      b = gradient_matrix(all, states.col(j), cfg.degenerate_eps);
    } catch (const NumericError&) {
      continue;
    }
    const Vec sv = singular_values(b);
    // Full rank k+1 needs k+1 singular values to exist in the first place;
    // with more fields than state dimensions the candidate cannot add a new
    // direction, and sigma_min would merely measure coverage of state space.
    if (sv.size() == static_cast<Eigen::Index>(all.size()) &&
        sv[sv.size() - 1] >= cfg.min_sigma)
      return true;
  }
  return false;
}

bool independent_method_b(const std::vector<ScalarField>& accepted,
                          const ScalarField& candidate, const Mat& states,
                          const IndependenceConfig& cfg) {
  if (accepted.empty()) return true;
  const auto pts = indep_points(states, cfg);
  RngStream rng(cfg.seed, kDirectionStream);
  for (int j : pts) {
    Mat q;
    Vec gc;
    try {
      q = gradient_matrix(accepted, states.col(j), cfg.degenerate_eps);
      gc = candidate.grad(states.col(j));
    } catch (const NumericError&) {
      continue;
    }
    const double gn = gc.norm();
    if (gn < cfg.degenerate_eps) continue;
    gc /= gn;

    // Orthonormalize the accepted gradients (drop near-dependent columns).
    Mat basis(q.rows(), q.cols());
    Eigen::Index nb = 0;
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
      Vec w = q.col(c);
      for (Eigen::Index k = 0; k < nb; ++k)
        w -= basis.col(k).dot(w) * basis.col(k);
      const double wn = w.norm();
      if (wn > 1e-12) basis.col(nb++) = w / wn;
    }

    // Random direction orthogonal to the accepted span. If nothing survives
    // projection after several tries, the span fills the space and the
    // candidate is trivially inside it at this point.
    bool have_t = false;
    Vec t(q.rows());
    for (int attempt = 0; attempt < cfg.max_redraws && !have_t; ++attempt) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.normal();
      t /= t.norm();
      for (Eigen::Index k = 0; k < nb; ++k)
        t -= basis.col(k).dot(t) * basis.col(k);
      const double tn = t.norm();
      if (tn > cfg.span_residual) {
        t /= tn;
        have_t = true;
      }
    }
    if (!have_t) continue;  // span is (numerically) everything here
    if (std::abs(t.dot(gc)) >= cfg.align_eps) return true;
  }
  return false;
}

bool is_independent(const std::vector<ScalarField>& accepted,
                    const ScalarField& candidate, const Mat& states,
                    const IndependenceConfig& cfg) {
  if (accepted.empty()) return true;
  return independent_method_b(accepted, candidate, states, cfg);
}

bool equivalent_fields(const ScalarField& a, const ScalarField& b,
                       const Mat& states, const RankConfig& cfg) {
  return differential_rank({a, b}, states, cfg) == 1;
}

}  // namespace conserva
