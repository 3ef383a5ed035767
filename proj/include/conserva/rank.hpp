// Counting functionally independent scalar fields on sampled data.
//
// Differential test: at a state z, stack the unit gradients of all fields as
// columns of B(z) and count normalized squared singular values above a
// threshold; the discovered count is the maximum over a seeded subsample of
// evaluation points.
//
// Manifold test: embed the data through the field values, standardize each
// value column, and read off local PCA dimension around anchor points across
// a geometric grid of neighborhood scales; the answer is the longest plateau
// of the rounded local dimension.
//
// Independence tests for a single candidate against an accepted set:
//   method A  rank of the extended gradient matrix via smallest singular value
//   method B  alignment with a random direction orthogonal to the accepted span
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "conserva/systems.hpp"

namespace conserva {

// A scalar field with a gradient: analytic invariant, trained network, or
// symbolic formula.
struct ScalarField {
  std::string label;
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> grad;
};

ScalarField field_from_cq(const AnalyticCq& cq);

struct RankConfig {
  int eval_points = 100;       // subsample size for the differential test
  double sv_tol = 1e-2;        // normalized sigma^2 threshold
  double degenerate_eps = 1e-12;
  std::uint64_t seed = 0;
};

// Unit-gradient matrix at one state: dim x n_fields.
Mat gradient_matrix(const std::vector<ScalarField>& fields, const Vec& z,
                    double degenerate_eps = 1e-12);

// Discovered count over a seeded subsample of the given states (dim x P).
int differential_rank(const std::vector<ScalarField>& fields, const Mat& states,
                      const RankConfig& cfg = {});

// Explained-variance fractions sigma_i^2 / sum sigma_j^2 at the first
// subsampled point that attains the maximal rank; feeds the report CSV.
Vec differential_spectrum(const std::vector<ScalarField>& fields,
                          const Mat& states, const RankConfig& cfg = {});

struct ManifoldConfig {
  int anchors = 100;
  int scales = 12;
  double scale_min = 0.15, scale_max = 1.6;  // multiples of sqrt(n_fields)
  double var_tol = 1e-2;                     // explained-variance threshold
  std::uint64_t seed = 0;
};

struct ManifoldResult {
  std::vector<double> scale;      // absolute neighborhood radii
  std::vector<double> n_eff;      // anchor-averaged local PCA dimension
  std::vector<char> valid;        // scale had >= n+1 rows at every anchor
  int rank = 0;                   // plateau value (rounded n_eff)
  int plateau_length = 0;
};

// values: P x n matrix of field values at sampled states.
ManifoldResult manifold_rank(const Mat& values, const ManifoldConfig& cfg = {});

struct IndependenceConfig {
  int test_points = 10;
  double align_eps = 1e-3;     // method B alignment threshold
  double min_sigma = 1e-3;     // method A smallest-singular-value threshold
  double span_residual = 1e-10;  // method B Gram-Schmidt redraw floor
  int max_redraws = 5;
  double degenerate_eps = 1e-12;
  std::uint64_t seed = 0;
};

// True when the candidate is functionally independent of `accepted` on the
// test points (subsampled from states). Method B is the default; method A
// is the fallback the caller can invoke directly.
bool independent_method_a(const std::vector<ScalarField>& accepted,
                          const ScalarField& candidate, const Mat& states,
                          const IndependenceConfig& cfg = {});
bool independent_method_b(const std::vector<ScalarField>& accepted,
                          const ScalarField& candidate, const Mat& states,
                          const IndependenceConfig& cfg = {});
bool is_independent(const std::vector<ScalarField>& accepted,
                    const ScalarField& candidate, const Mat& states,
                    const IndependenceConfig& cfg = {});

// Two fields agree up to reparameterization iff their joint differential
// rank is 1 on the data.
bool equivalent_fields(const ScalarField& a, const ScalarField& b,
                       const Mat& states, const RankConfig& cfg = {});

}  // namespace conserva
