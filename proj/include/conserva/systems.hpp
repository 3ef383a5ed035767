// Dynamical-system registry: state conventions, vector fields, analytic
// invariants, seeded samplers and the RK4 integrator.
//
// State conventions
//   kepler        (x, v_x, y, v_y)
//   kepler-aug    (x, v_x, y, v_y, r)
//   damped-ho     (x, p)
//   iso-ho        (x, p_x, y, p_y)            m = 1, omega = (1,1)
//   aniso-ho      (x, p_x, y, p_y)            m = 1, omega = (1,2) by default
//   threebody     (x_i, y_i, v_ix, v_iy) per body, body-major, 3 bodies
//   threebody-aug threebody + (r_12, r_13, r_23)
//   kdv           grid-major, 6 fields per point: phi .. phi_xxxxx
//   nls           grid-major, 13 fields per point: |psi|,|psi_x|,|psi_xx| then
//                 Re/Im of psi^(0..4) (carrier coordinates, rate 0)
#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "conserva/rng.hpp"
#include "conserva/vendor_json.hpp"

namespace conserva {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// A scalar invariant with a hand-derived exact gradient.
struct AnalyticCq {
  std::string label;
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> grad;
  // Angle-valued invariants live on a circle; trajectory drift checks unwrap
  // them by continuity instead of comparing raw principal values.
  bool angle_valued = false;
  // Quantum by which an angle-valued invariant jumps at an atan2 branch cut:
  // 2*pi for a plain angle, gamma*pi for the damped-oscillator spiral phase,
  // still 2*pi for integer-weighted phase differences.
  double branch_period = 6.283185307179586477;
};

// Layout metadata for grid-discretized (PDE) systems.
struct GridLayout {
  int points = 0;
  int fields_per_point = 0;   // stored fields, including carrier coordinates
  int exposed_fields = 0;     // fields networks/formulas may read (per point)
  std::vector<std::string> feature_names;  // one per exposed field
  std::vector<bool> abs_feature;  // read |field| instead of the signed field
  double x_min = 0, x_max = 0;
  double dx() const { return (x_max - x_min) / (points - 1); }
  double x(int i) const { return x_min + dx() * i; }
};

struct SystemSpec {
  std::string name;
  int dim = 0;  // state dimension s
  std::vector<std::string> dim_names;
  nlohmann::json params;

  // f(z); output length always == dim.
  std::function<Vec(const Vec&)> field;

  // One seeded sample; rejection loops stay inside the given stream.
  std::function<Vec(RngStream&)> draw_state;

  // Invariants that hold to machine precision for the exact dynamics.
  std::vector<AnalyticCq> analytic_cqs;

  // Named conserved functionals of the *continuum* PDE, discretized on the
  // grid. Conserved by the discrete flow only to quadrature accuracy, so they
  // are reference targets for the symbolic tolerance rather than members of
  // the machine-precision registry above.
  std::vector<AnalyticCq> reference_cqs;

  std::optional<GridLayout> grid;

  bool is_pde() const { return grid.has_value(); }
};

// Throws ConfigError for unknown names or invalid parameters.
SystemSpec make_system(const std::string& name,
                       const nlohmann::json& params = nlohmann::json::object());
std::vector<std::string> system_names();

// ---------------------------------------------------------------------------

struct SampleBatch {
  std::string system;
  std::uint64_t seed = 0;
  Mat states;  // dim x P
  Mat fields;  // dim x P, f(z) column-matched
  int count() const { return static_cast<int>(states.cols()); }
};

// Deterministic for fixed (system, count, seed) regardless of worker count:
// sample i draws only from stream i.
SampleBatch sample_batch(const SystemSpec& sys, int count, std::uint64_t seed);

// CSV persistence: header row names each state dimension, then each field
// component prefixed "f_". A JSON sidecar (<stem>.meta.json) records
// system/params/seed/count for provenance.
void write_batch_csv(const std::filesystem::path& path, const SystemSpec& sys,
                     const SampleBatch& b);
SampleBatch read_batch_csv(const std::filesystem::path& path);

// |f_hat . grad_hat| at z. Throws NumericError when either norm < 1e-12.
double conservation_residual(const SystemSpec& sys, const AnalyticCq& cq,
                             const Vec& z);

// ---------------------------------------------------------------------------

struct Trajectory {
  Mat states;           // dim x (steps+1)
  std::vector<double> t;
};

// Classic fixed-step RK4. Throws NumericError (with the offending step in the
// message) if the state stops being finite.
Trajectory rk4(const SystemSpec& sys, const Vec& z0, double dt, int steps);

// Max |H(t)-H(0)| along a trajectory, angle-unwrapped for angle-valued
// invariants; used by the integrator sanity checks.
double trajectory_drift(const Trajectory& tr, const AnalyticCq& cq);

}  // namespace conserva
