#include "conserva/systems.hpp"

#include <cmath>
#include <filesystem>

#include "conserva/common.hpp"
#include "conserva/io.hpp"
#include "conserva/pde.hpp"

namespace conserva {
namespace {

constexpr double kBox = 2.0;          // sampling box half-width for ODE systems
constexpr double kMinSeparation = 0.1;  // rejection radius (origin/pairwise)
constexpr int kMaxDraws = 1000;

Vec box_draw(RngStream& rng, int dim) {
  Vec z(dim);
  for (int i = 0; i < dim; ++i) z[i] = rng.uniform(-kBox, kBox);
  return z;
}

// Unknown parameter keys are configuration mistakes (a typo like "gm" for
// "GM" would otherwise be silently ignored).
void require_keys(const nlohmann::json& p, const char* system,
                  std::initializer_list<const char*> allowed) {
  if (p.is_null()) return;
  if (!p.is_object())
    throw ConfigError(std::string(system) + ": params must be a JSON object");
  for (const auto& item : p.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || item.key() == a;
    if (!known)
      throw ConfigError(std::string(system) + ": unknown parameter '" +
                        item.key() + "'");
  }
}

// ---------------------------------------------------------------- kepler ---

SystemSpec kepler_system(const nlohmann::json& p, bool augmented) {
  require_keys(p, augmented ? "kepler-aug" : "kepler", {"GM"});
  const double gm = p.value("GM", 1.0);
  if (gm <= 0) throw ConfigError("kepler: GM must be positive");

  SystemSpec s;
  s.name = augmented ? "kepler-aug" : "kepler";
  s.dim = augmented ? 5 : 4;
  s.dim_names = {"x", "v_x", "y", "v_y"};
  if (augmented) s.dim_names.push_back("r");
  s.params = {{"GM", gm}};

  s.field = [gm, augmented](const Vec& z) {
    const double x = z[0], vx = z[1], y = z[2], vy = z[3];
    const double rho3 = std::pow(x * x + y * y, 1.5);
    Vec f(augmented ? 5 : 4);
    f[0] = vx;
    f[1] = -gm * x / rho3;
    f[2] = vy;
    f[3] = -gm * y / rho3;
    if (augmented) f[4] = (x * vx + y * vy) / z[4];
    return f;
  };

  s.draw_state = [augmented](RngStream& rng) {
    for (int t = 0; t < kMaxDraws; ++t) {
      Vec z = box_draw(rng, 4);
      const double r = std::hypot(z[0], z[2]);
      if (r < kMinSeparation) continue;
      if (!augmented) return z;
      Vec za(5);
      za << z[0], z[1], z[2], z[3], r;
      return za;
    }
    throw NumericError("kepler: sampler failed to find an admissible state");
  };

  // r as seen by the invariants: the coordinate when augmented, sqrt(x^2+y^2)
  // otherwise. Both give identical values on sampled (on-manifold) states.
  auto radius = [augmented](const Vec& z) {
    return augmented ? z[4] : std::hypot(z[0], z[2]);
  };

  AnalyticCq energy;
  energy.label = "energy";
  energy.value = [gm, radius](const Vec& z) {
    return 0.5 * (z[1] * z[1] + z[3] * z[3]) - gm / radius(z);
  };
  energy.grad = [gm, augmented](const Vec& z) {
    Vec g = Vec::Zero(z.size());
    g[1] = z[1];
    g[3] = z[3];
    if (augmented) {
      g[4] = gm / (z[4] * z[4]);
    } else {
      const double r3 = std::pow(z[0] * z[0] + z[2] * z[2], 1.5);
      g[0] = gm * z[0] / r3;
      g[2] = gm * z[2] / r3;
    }
    return g;
  };

  AnalyticCq angmom;
  angmom.label = "angular_momentum";
  angmom.value = [](const Vec& z) { return z[0] * z[3] - z[2] * z[1]; };
  angmom.grad = [](const Vec& z) {
    Vec g = Vec::Zero(z.size());
    g[0] = z[3];
    g[1] = -z[2];
    g[2] = -z[1];
    g[3] = z[0];
    return g;
  };

  // Orientation of the orbit axis: atan2 of the (conserved) Laplace vector
  // A = v x L - GM r_hat. Undefined on circular orbits (A = 0), which the
  // rejection sampler hits with probability zero.
  AnalyticCq axis;
  axis.label = "axis_angle";
  axis.angle_valued = true;
  axis.value = [gm, radius](const Vec& z) {
    const double x = z[0], vx = z[1], y = z[2], vy = z[3];
    const double L = x * vy - y * vx, r = radius(z);
    const double ax = vy * L - gm * x / r;
    const double ay = -vx * L - gm * y / r;
    return std::atan2(ay, ax);
  };
  axis.grad = [gm, augmented, radius](const Vec& z) {
    const double x = z[0], vx = z[1], y = z[2], vy = z[3];
    const double L = x * vy - y * vx, r = radius(z);
    const double ax = vy * L - gm * x / r;
    const double ay = -vx * L - gm * y / r;
    Vec gax = Vec::Zero(z.size()), gay = Vec::Zero(z.size());
    if (augmented) {
      gax[0] = vy * vy - gm / r;
      gax[2] = -vx * vy;
      gax[4] = gm * x / (r * r);
      gay[0] = -vx * vy;
      gay[2] = vx * vx - gm / r;
      gay[4] = gm * y / (r * r);
    } else {
      const double r3 = r * r * r;
      gax[0] = vy * vy - gm * y * y / r3;
      gax[2] = -vx * vy + gm * x * y / r3;
      gay[0] = -vx * vy + gm * x * y / r3;
      gay[2] = vx * vx - gm * x * x / r3;
    }
    gax[1] = -y * vy;
    gax[3] = 2 * x * vy - y * vx;
    gay[1] = -x * vy + 2 * y * vx;
    gay[3] = -x * vx;
    const double a2 = ax * ax + ay * ay;
    return Vec((ax * gay - ay * gax) / a2);
  };

  s.analytic_cqs = {energy, angmom, axis};
  return s;
}

// ------------------------------------------------------------- damped-ho ---

SystemSpec damped_ho_system(const nlohmann::json& p) {
  require_keys(p, "damped-ho", {"gamma"});
  const double gamma = p.value("gamma", 1.0);
  if (gamma < 0) throw ConfigError("damped-ho: gamma must be >= 0");
  if (gamma == 2.0)
    throw ConfigError("damped-ho: gamma == 2 (critical damping) has no "
                      "log-spiral invariant; perturb gamma");

  SystemSpec s;
  s.name = "damped-ho";
  s.dim = 2;
  s.dim_names = {"x", "p"};
  s.params = {{"gamma", gamma}};

  s.field = [gamma](const Vec& z) {
    Vec f(2);
    f[0] = z[1];
    f[1] = -z[0] - gamma * z[1];
    return f;
  };
  s.draw_state = [](RngStream& rng) { return box_draw(rng, 2); };

  AnalyticCq cq;
  if (gamma == 0.0) {
    cq.label = "energy";
    cq.value = [](const Vec& z) { return 0.5 * (z[0] * z[0] + z[1] * z[1]); };
    cq.grad = [](const Vec& z) { return Vec(z); };
  } else if (gamma < 2.0) {
    // Underdamped: in eigen-polar coordinates u = p + (gamma/2) x,
    // v = wt * x the flow is a uniform log-spiral, so
    // (gamma/2) * arg(u + iv) + wt * ln|u + iv| is exactly constant.
    const double wt = std::sqrt(1.0 - 0.25 * gamma * gamma);
    cq.label = "spiral_phase";
    cq.angle_valued = true;
    cq.branch_period = gamma * M_PI;
    cq.value = [gamma, wt](const Vec& z) {
      const double u = z[1] + 0.5 * gamma * z[0];
      const double v = wt * z[0];
      return 0.5 * gamma * std::atan2(v, u) + 0.5 * wt * std::log(u * u + v * v);
    };
    cq.grad = [gamma, wt](const Vec& z) {
      const double u = z[1] + 0.5 * gamma * z[0];
      const double v = wt * z[0];
      const double rho2 = u * u + v * v;
      Vec g(2);
      // d/dx: du/dx = gamma/2, dv/dx = wt; d/dp: du/dp = 1, dv/dp = 0.
      g[0] = (0.5 * gamma * (u * wt - v * 0.5 * gamma) +
              wt * (u * 0.5 * gamma + v * wt)) / rho2;
      g[1] = (0.5 * gamma * (-v) + wt * u) / rho2;
      return g;
    };
  } else {
    // Overdamped: real eigenvalues l+- with l+ l- = 1, l+ + l- = -gamma.
    // w+- = p - l-+ x satisfy dw/dt = l w, so l- ln|w+| - l+ ln|w-| is
    // constant.
    const double disc = std::sqrt(gamma * gamma - 4.0);
    const double lp = 0.5 * (-gamma + disc), lm = 0.5 * (-gamma - disc);
    cq.label = "eigenlog_ratio";
    cq.value = [lp, lm](const Vec& z) {
      const double wp = z[1] - lm * z[0];
      const double wm = z[1] - lp * z[0];
      return lm * std::log(std::abs(wp)) - lp * std::log(std::abs(wm));
    };
    cq.grad = [lp, lm](const Vec& z) {
      const double wp = z[1] - lm * z[0];
      const double wm = z[1] - lp * z[0];
      Vec g(2);
      g[0] = lm * (-lm) / wp - lp * (-lp) / wm;
      g[1] = lm / wp - lp / wm;
      return g;
    };
  }
  s.analytic_cqs = {cq};
  return s;
}

// ------------------------------------------------------- 2-D oscillators ---

SystemSpec ho2d_system(const nlohmann::json& p, bool iso) {
  if (iso)
    require_keys(p, "iso-ho", {});
  else
    require_keys(p, "aniso-ho", {"m", "wx", "wy"});
  const double m = iso ? 1.0 : p.value("m", 1.0);
  const double wx = iso ? 1.0 : p.value("wx", 1.0);
  const double wy = iso ? 1.0 : p.value("wy", 2.0);
  if (m <= 0 || wx <= 0 || wy <= 0)
    throw ConfigError("oscillator: m, wx, wy must be positive");

  SystemSpec s;
  s.name = iso ? "iso-ho" : "aniso-ho";
  s.dim = 4;
  s.dim_names = {"x", "p_x", "y", "p_y"};
  s.params = {{"m", m}, {"wx", wx}, {"wy", wy}};

  s.field = [m, wx, wy](const Vec& z) {
    Vec f(4);
    f[0] = z[1] / m;
    f[1] = -wx * wx * z[0];
    f[2] = z[3] / m;
    f[3] = -wy * wy * z[2];
    return f;
  };
  s.draw_state = [](RngStream& rng) { return box_draw(rng, 4); };

  auto mode_energy = [m](double w, int xi, int pi, const char* label) {
    AnalyticCq cq;
    cq.label = label;
    cq.value = [m, w, xi, pi](const Vec& z) {
      return 0.5 * w * w * z[xi] * z[xi] + z[pi] * z[pi] / (2 * m);
    };
    cq.grad = [m, w, xi, pi](const Vec& z) {
      Vec g = Vec::Zero(4);
      g[xi] = w * w * z[xi];
      g[pi] = z[pi] / m;
      return g;
    };
    return cq;
  };
  s.analytic_cqs.push_back(mode_energy(wx, 0, 1, "mode_energy_x"));
  s.analytic_cqs.push_back(mode_energy(wy, 2, 3, "mode_energy_y"));

  if (wx == wy) {
    AnalyticCq L;
    L.label = "angular_momentum";
    L.value = [](const Vec& z) { return z[0] * z[3] - z[2] * z[1]; };
    L.grad = [](const Vec& z) {
      Vec g(4);
      g << z[3], -z[2], -z[1], z[0];
      return g;
    };
    AnalyticCq K;
    K.label = "correlation";
    K.value = [m, wx](const Vec& z) {
      return m * wx * wx * z[0] * z[2] + z[1] * z[3];
    };
    K.grad = [m, wx](const Vec& z) {
      Vec g(4);
      g << m * wx * wx * z[2], z[3], m * wx * wx * z[0], z[1];
      return g;
    };
    s.analytic_cqs.push_back(L);
    s.analytic_cqs.push_back(K);
  } else {
    // Mode phases advance at fixed rates w/sqrt(m), so the integer-weighted
    // phase difference wy*theta_x - wx*theta_y is constant (angle-valued).
    const double sm = std::sqrt(m);
    AnalyticCq phase;
    phase.label = "phase_lock";
    phase.angle_valued = true;
    phase.value = [sm, wx, wy](const Vec& z) {
      const double t1 = std::atan2(z[1] / (sm * wx), z[0]);
      const double t2 = std::atan2(z[3] / (sm * wy), z[2]);
      return wy * t1 - wx * t2;
    };
    phase.grad = [sm, wx, wy](const Vec& z) {
      const double v1 = z[1] / (sm * wx), v2 = z[3] / (sm * wy);
      const double r1 = z[0] * z[0] + v1 * v1, r2 = z[2] * z[2] + v2 * v2;
      Vec g(4);
      g[0] = wy * (-v1) / r1;
      g[1] = wy * z[0] / (sm * wx * r1);
      g[2] = -wx * (-v2) / r2;
      g[3] = -wx * z[2] / (sm * wy * r2);
      return g;
    };
    s.analytic_cqs.push_back(phase);
  }
  return s;
}

// ----------------------------------------------------------- three-body ---

SystemSpec threebody_system(const nlohmann::json& p, bool augmented) {
  require_keys(p, augmented ? "threebody-aug" : "threebody", {"masses", "G"});
  std::vector<double> masses = p.value("masses", std::vector<double>{1, 1, 1});
  const double G = p.value("G", 1.0);
  if (masses.size() != 3) throw ConfigError("threebody: need 3 masses");
  for (double m : masses)
    if (m <= 0) throw ConfigError("threebody: masses must be positive");

  SystemSpec s;
  s.name = augmented ? "threebody-aug" : "threebody";
  s.dim = augmented ? 15 : 12;
  for (int b = 1; b <= 3; ++b) {
    const std::string i = std::to_string(b);
    s.dim_names.push_back("x" + i);
    s.dim_names.push_back("y" + i);
    s.dim_names.push_back("v" + i + "x");
    s.dim_names.push_back("v" + i + "y");
  }
  if (augmented) {
    s.dim_names.insert(s.dim_names.end(), {"r12", "r13", "r23"});
  }
  s.params = {{"masses", masses}, {"G", G}};

  // Pair order (r12, r13, r23) -> state indices 12, 13, 14 when augmented.
  static constexpr int kPairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};

  s.field = [masses, G, augmented](const Vec& z) {
    Vec f = Vec::Zero(z.size());
    for (int b = 0; b < 3; ++b) {
      f[4 * b + 0] = z[4 * b + 2];
      f[4 * b + 1] = z[4 * b + 3];
    }
    for (int k = 0; k < 3; ++k) {
      const int i = kPairs[k][0], j = kPairs[k][1];
      const double dx = z[4 * j] - z[4 * i];
      const double dy = z[4 * j + 1] - z[4 * i + 1];
      const double r2 = dx * dx + dy * dy;
      const double inv_r3 = 1.0 / (r2 * std::sqrt(r2));
      // Attractive gravity: body i is pulled toward body j.
      f[4 * i + 2] += G * masses[j] * dx * inv_r3;
      f[4 * i + 3] += G * masses[j] * dy * inv_r3;
      f[4 * j + 2] -= G * masses[i] * dx * inv_r3;
      f[4 * j + 3] -= G * masses[i] * dy * inv_r3;
      if (augmented) {
        const double dvx = z[4 * j + 2] - z[4 * i + 2];
        const double dvy = z[4 * j + 3] - z[4 * i + 3];
        f[12 + k] = (dx * dvx + dy * dvy) / z[12 + k];
      }
    }
    return f;
  };

  s.draw_state = [augmented](RngStream& rng) {
    for (int t = 0; t < kMaxDraws; ++t) {
      Vec z = box_draw(rng, 12);
      bool ok = true;
      double r[3];
      for (int k = 0; k < 3 && ok; ++k) {
        const int i = kPairs[k][0], j = kPairs[k][1];
        r[k] = std::hypot(z[4 * j] - z[4 * i], z[4 * j + 1] - z[4 * i + 1]);
        ok = r[k] >= kMinSeparation;
      }
      if (!ok) continue;
      if (!augmented) return z;
      Vec za(15);
      za.head(12) = z;
      za[12] = r[0];
      za[13] = r[1];
      za[14] = r[2];
      return za;
    }
    throw NumericError("threebody: sampler failed to find an admissible state");
  };

  AnalyticCq px;
  px.label = "momentum_x";
  px.value = [masses](const Vec& z) {
    return masses[0] * z[2] + masses[1] * z[6] + masses[2] * z[10];
  };
  px.grad = [masses](const Vec& z) {
    Vec g = Vec::Zero(z.size());
    for (int b = 0; b < 3; ++b) g[4 * b + 2] = masses[b];
    return g;
  };
  AnalyticCq py;
  py.label = "momentum_y";
  py.value = [masses](const Vec& z) {
    return masses[0] * z[3] + masses[1] * z[7] + masses[2] * z[11];
  };
  py.grad = [masses](const Vec& z) {
    Vec g = Vec::Zero(z.size());
    for (int b = 0; b < 3; ++b) g[4 * b + 3] = masses[b];
    return g;
  };
  AnalyticCq am;
  am.label = "angular_momentum";
  am.value = [masses](const Vec& z) {
    double L = 0;
    for (int b = 0; b < 3; ++b)
      L += masses[b] * (z[4 * b] * z[4 * b + 3] - z[4 * b + 1] * z[4 * b + 2]);
    return L;
  };
  am.grad = [masses](const Vec& z) {
    Vec g = Vec::Zero(z.size());
    for (int b = 0; b < 3; ++b) {
      g[4 * b + 0] = masses[b] * z[4 * b + 3];
      g[4 * b + 1] = -masses[b] * z[4 * b + 2];
      g[4 * b + 2] = -masses[b] * z[4 * b + 1];
      g[4 * b + 3] = masses[b] * z[4 * b + 0];
    }
    return g;
  };
  AnalyticCq en;
  en.label = "energy";
  en.value = [masses, G, augmented](const Vec& z) {
    double T = 0;
    for (int b = 0; b < 3; ++b)
      T += 0.5 * masses[b] *
           (z[4 * b + 2] * z[4 * b + 2] + z[4 * b + 3] * z[4 * b + 3]);
    double V = 0;
    for (int k = 0; k < 3; ++k) {
      const int i = kPairs[k][0], j = kPairs[k][1];
      const double r =
          augmented ? z[12 + k]
                    : std::hypot(z[4 * j] - z[4 * i], z[4 * j + 1] - z[4 * i + 1]);
      V -= G * masses[i] * masses[j] / r;
    }
    return T + V;
  };
  en.grad = [masses, G, augmented](const Vec& z) {
    Vec g = Vec::Zero(z.size());
    for (int b = 0; b < 3; ++b) {
      g[4 * b + 2] = masses[b] * z[4 * b + 2];
      g[4 * b + 3] = masses[b] * z[4 * b + 3];
    }
    for (int k = 0; k < 3; ++k) {
      const int i = kPairs[k][0], j = kPairs[k][1];
      if (augmented) {
        g[12 + k] = G * masses[i] * masses[j] / (z[12 + k] * z[12 + k]);
      } else {
        const double dx = z[4 * j] - z[4 * i];
        const double dy = z[4 * j + 1] - z[4 * i + 1];
        const double r3 = std::pow(dx * dx + dy * dy, 1.5);
        const double c = G * masses[i] * masses[j] / r3;
        g[4 * i + 0] += c * -dx;  // d(-1/r)/dx_i = -dx/r^3 with dx = x_j - x_i
        g[4 * i + 1] += c * -dy;
        g[4 * j + 0] += c * dx;
        g[4 * j + 1] += c * dy;
      }
    }
    return g;
  };
  s.analytic_cqs = {px, py, am, en};
  return s;
}

// ------------------------------------------------------------- PDE cases ---

GridLayout kdv_layout(const nlohmann::json& p) {
  GridLayout g;
  g.points = p.value("grid", 40);
  g.x_min = p.value("x_min", -10.0);
  g.x_max = p.value("x_max", 10.0);
  g.fields_per_point = 6;
  g.exposed_fields = 3;
  g.feature_names = {"phi", "phi_x", "phi_xx"};
  g.abs_feature = {false, true, true};
  if (g.points < 4 || g.x_max <= g.x_min) throw ConfigError("kdv: bad grid");
  return g;
}

GridLayout nls_layout(const nlohmann::json& p) {
  GridLayout g;
  g.points = p.value("grid", 40);
  g.x_min = p.value("x_min", -10.0);
  g.x_max = p.value("x_max", 10.0);
  g.fields_per_point = 13;
  g.exposed_fields = 3;
  g.feature_names = {"psi", "psi_x", "psi_xx"};
  g.abs_feature = {false, false, false};  // magnitudes already
  if (g.points < 4 || g.x_max <= g.x_min) throw ConfigError("nls: bad grid");
  return g;
}

struct MixtureParams {
  int n_gauss;
  double amp_max, mu_max, sigma;
};

MixtureParams mixture_params(const nlohmann::json& p) {
  MixtureParams mp;
  mp.n_gauss = p.value("n_gauss", 5);
  mp.amp_max = p.value("amp_max", 5.0);
  mp.mu_max = p.value("mu_max", 3.0);
  mp.sigma = p.value("sigma", 1.5);
  if (mp.n_gauss < 1 || mp.amp_max <= 0 || mp.sigma <= 0)
    throw ConfigError("pde: bad mixture parameters");
  if (mp.mu_max > 3.0 + 1e-12)
    throw ConfigError("pde: mixture means must stay within [-3, 3]");
  return mp;
}

// Profile admissibility: nontrivial peak, and endpoints below 1e-3 of it.
bool profile_ok(const std::vector<double>& magnitude) {
  double peak = 0;
  for (double v : magnitude) peak = std::max(peak, std::abs(v));
  if (peak < 1e-3) return false;
  return std::abs(magnitude.front()) < 1e-3 * peak &&
         std::abs(magnitude.back()) < 1e-3 * peak;
}

SystemSpec kdv_system(const nlohmann::json& p) {
  require_keys(p, "kdv", {"grid", "x_min", "x_max", "n_gauss", "amp_max",
                          "mu_max", "sigma"});
  SystemSpec s;
  s.name = "kdv";
  const GridLayout layout = kdv_layout(p);
  const MixtureParams mp = mixture_params(p);
  s.grid = layout;
  s.dim = layout.points * layout.fields_per_point;
  static const char* kField[6] = {"phi",      "phi_x",    "phi_xx",
                                  "phi_xxx",  "phi_xxxx", "phi_xxxxx"};
  for (int i = 0; i < layout.points; ++i)
    for (int k = 0; k < 6; ++k)
      s.dim_names.push_back(std::string(kField[k]) + "_" + std::to_string(i));
  s.params = {{"grid", layout.points}, {"x_min", layout.x_min},
              {"x_max", layout.x_max}, {"n_gauss", mp.n_gauss},
              {"amp_max", mp.amp_max}, {"mu_max", mp.mu_max},
              {"sigma", mp.sigma}};

  s.field = [layout](const Vec& z) { return kdv_field(layout, z); };

  s.draw_state = [layout, mp](RngStream& rng) {
    for (int t = 0; t < kMaxDraws; ++t) {
      GaussianMixture m =
          draw_mixture(rng, mp.n_gauss, mp.amp_max, mp.mu_max, mp.sigma);
      std::vector<double> phi(layout.points);
      for (int i = 0; i < layout.points; ++i) phi[i] = m(layout.x(i));
      if (!profile_ok(phi)) continue;
      return build_kdv_state(layout, m);
    }
    throw NumericError("kdv: sampler failed to find an admissible profile");
  };

  const int fp = layout.fields_per_point;
  auto sum_cq = [fp, layout](const char* label,
                             std::function<double(double, double)> density,
                             std::function<void(double, double, double&, double&)>
                                 ddensity) {
    AnalyticCq cq;
    cq.label = label;
    cq.value = [fp, layout, density](const Vec& z) {
      double acc = 0;
      for (int i = 0; i < layout.points; ++i)
        acc += density(z[fp * i], z[fp * i + 1]);
      return acc;
    };
    cq.grad = [fp, layout, ddensity](const Vec& z) {
      Vec g = Vec::Zero(z.size());
      for (int i = 0; i < layout.points; ++i)
        ddensity(z[fp * i], z[fp * i + 1], g[fp * i], g[fp * i + 1]);
      return g;
    };
    return cq;
  };
  s.reference_cqs.push_back(sum_cq(
      "mass", [](double phi, double) { return phi; },
      [](double, double, double& g0, double&) { g0 = 1; }));
  s.reference_cqs.push_back(sum_cq(
      "momentum", [](double phi, double) { return phi * phi; },
      [](double phi, double, double& g0, double&) { g0 = 2 * phi; }));
  // For phi_t = 6 phi phi_x - phi_xxx the cubic invariant carries a plus
  // sign on the gradient term: d/dt int(2 phi^3 + phi_x^2) dx = 0.
  s.reference_cqs.push_back(sum_cq(
      "energy",
      [](double phi, double phix) { return 2 * phi * phi * phi + phix * phix; },
      [](double phi, double phix, double& g0, double& g1) {
        g0 = 6 * phi * phi;
        g1 = 2 * phix;
      }));
  return s;
}

SystemSpec nls_system(const nlohmann::json& p) {
  require_keys(p, "nls", {"grid", "x_min", "x_max", "n_gauss", "amp_max",
                          "mu_max", "sigma", "kappa"});
  SystemSpec s;
  s.name = "nls";
  const GridLayout layout = nls_layout(p);
  const MixtureParams mp = mixture_params(p);
  const double kappa = p.value("kappa", 1.0);
  s.grid = layout;
  s.dim = layout.points * layout.fields_per_point;
  static const char* kField[13] = {"psi",      "psi_x",    "psi_xx",
                                   "psi_r",    "psi_i",    "psi_x_r",
                                   "psi_x_i",  "psi_xx_r", "psi_xx_i",
                                   "psi_xxx_r", "psi_xxx_i", "psi_xxxx_r",
                                   "psi_xxxx_i"};
  for (int i = 0; i < layout.points; ++i)
    for (int k = 0; k < 13; ++k)
      s.dim_names.push_back(std::string(kField[k]) + "_" + std::to_string(i));
  s.params = {{"grid", layout.points}, {"x_min", layout.x_min},
              {"x_max", layout.x_max}, {"n_gauss", mp.n_gauss},
              {"amp_max", mp.amp_max}, {"mu_max", mp.mu_max},
              {"sigma", mp.sigma},     {"kappa", kappa}};

  s.field = [layout, kappa](const Vec& z) { return nls_field(layout, z, kappa); };

  s.draw_state = [layout, mp](RngStream& rng) {
    for (int t = 0; t < kMaxDraws; ++t) {
      GaussianMixture re =
          draw_mixture(rng, mp.n_gauss, mp.amp_max, mp.mu_max, mp.sigma);
      GaussianMixture im =
          draw_mixture(rng, mp.n_gauss, mp.amp_max, mp.mu_max, mp.sigma);
      std::vector<double> mag(layout.points);
      for (int i = 0; i < layout.points; ++i)
        mag[i] = std::hypot(re(layout.x(i)), im(layout.x(i)));
      if (!profile_ok(mag)) continue;
      return build_nls_state(layout, re, im);
    }
    throw NumericError("nls: sampler failed to find an admissible profile");
  };

  const int fp = layout.fields_per_point;
  AnalyticCq unit;
  unit.label = "unitarity";
  unit.value = [fp, layout](const Vec& z) {
    double acc = 0;
    for (int i = 0; i < layout.points; ++i) acc += z[fp * i] * z[fp * i];
    return acc;
  };
  unit.grad = [fp, layout](const Vec& z) {
    Vec g = Vec::Zero(z.size());
    for (int i = 0; i < layout.points; ++i) g[fp * i] = 2 * z[fp * i];
    return g;
  };
  AnalyticCq en;
  en.label = "energy";
  en.value = [fp, layout, kappa](const Vec& z) {
    double acc = 0;
    for (int i = 0; i < layout.points; ++i) {
      const double a = z[fp * i], ax = z[fp * i + 1];
      acc += ax * ax + kappa * a * a * a * a;
    }
    return acc;
  };
  en.grad = [fp, layout, kappa](const Vec& z) {
    Vec g = Vec::Zero(z.size());
    for (int i = 0; i < layout.points; ++i) {
      const double a = z[fp * i], ax = z[fp * i + 1];
      g[fp * i] = 4 * kappa * a * a * a;
      g[fp * i + 1] = 2 * ax;
    }
    return g;
  };
  s.reference_cqs = {unit, en};
  return s;
}

}  // namespace

SystemSpec make_system(const std::string& name, const nlohmann::json& params) {
  if (name == "kepler") return kepler_system(params, false);
  if (name == "kepler-aug") return kepler_system(params, true);
  if (name == "damped-ho") return damped_ho_system(params);
  if (name == "iso-ho") return ho2d_system(params, true);
  if (name == "aniso-ho") return ho2d_system(params, false);
  if (name == "threebody") return threebody_system(params, false);
  if (name == "threebody-aug") return threebody_system(params, true);
  if (name == "kdv") return kdv_system(params);
  if (name == "nls") return nls_system(params);
  throw ConfigError("unknown system: " + name);
}

std::vector<std::string> system_names() {
  return {"kepler",    "kepler-aug", "damped-ho",     "iso-ho", "aniso-ho",
          "threebody", "threebody-aug", "kdv",        "nls"};
}

SampleBatch sample_batch(const SystemSpec& sys, int count, std::uint64_t seed) {
  if (count <= 0) throw ConfigError("sample: count must be positive");
  SampleBatch b;
  b.system = sys.name;
  b.seed = seed;
  b.states.resize(sys.dim, count);
  b.fields.resize(sys.dim, count);
  parallel_chunks(count, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      RngStream rng(seed, static_cast<std::uint64_t>(i));
      const Vec z = sys.draw_state(rng);
      b.states.col(i) = z;
      b.fields.col(i) = sys.field(z);
    }
  });
  return b;
}

void write_batch_csv(const std::filesystem::path& path, const SystemSpec& sys,
                     const SampleBatch& b) {
  std::vector<std::string> cols = sys.dim_names;
  for (const auto& n : sys.dim_names) cols.push_back("f_" + n);
  Mat rows(b.count(), 2 * b.states.rows());
  rows.leftCols(b.states.rows()) = b.states.transpose();
  rows.rightCols(b.fields.rows()) = b.fields.transpose();
  write_csv(path, cols, rows);
  nlohmann::json meta = {{"system", b.system},
                         {"params", sys.params},
                         {"seed", b.seed},
                         {"count", b.count()},
                         {"dim", b.states.rows()}};
  auto meta_path = path;
  meta_path.replace_extension(".meta.json");
  write_json(meta_path, meta);
}

SampleBatch read_batch_csv(const std::filesystem::path& path) {
  auto meta_path = path;
  meta_path.replace_extension(".meta.json");
  const nlohmann::json meta = require_json(meta_path);
  const CsvTable t = read_csv(path);
  SampleBatch b;
  b.system = meta.at("system").get<std::string>();
  b.seed = meta.at("seed").get<std::uint64_t>();
  const Eigen::Index dim = meta.at("dim").get<Eigen::Index>();
  if (t.rows.cols() != 2 * dim)
    throw ArtifactError("sample csv width does not match its sidecar");
  b.states = t.rows.leftCols(dim).transpose();
  b.fields = t.rows.rightCols(dim).transpose();
  return b;
}

double conservation_residual(const SystemSpec& sys, const AnalyticCq& cq,
                             const Vec& z) {
  const Vec f = sys.field(z);
  const Vec g = cq.grad(z);
  const double nf = f.norm(), ng = g.norm();
  if (nf < 1e-12 || ng < 1e-12)
    throw NumericError("conservation_residual: degenerate point (|f|=" +
                       std::to_string(nf) + ", |grad|=" + std::to_string(ng) +
                       ")");
  return std::abs(f.dot(g)) / (nf * ng);
}

Trajectory rk4(const SystemSpec& sys, const Vec& z0, double dt, int steps) {
  if (dt <= 0 || steps < 1) throw ConfigError("rk4: bad dt/steps");
  Trajectory tr;
  tr.states.resize(sys.dim, steps + 1);
  tr.t.resize(steps + 1);
  Vec z = z0;
  tr.states.col(0) = z;
  tr.t[0] = 0;
  for (int k = 0; k < steps; ++k) {
    const Vec k1 = sys.field(z);
    const Vec k2 = sys.field(z + 0.5 * dt * k1);
    const Vec k3 = sys.field(z + 0.5 * dt * k2);
    const Vec k4 = sys.field(z + dt * k3);
    z += (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
    if (!z.allFinite())
      throw NumericError("rk4: state diverged at step " + std::to_string(k + 1));
    tr.states.col(k + 1) = z;
    tr.t[k + 1] = dt * (k + 1);
  }
  return tr;
}

double trajectory_drift(const Trajectory& tr, const AnalyticCq& cq) {
  const Eigen::Index n = tr.states.cols();
  double h0 = cq.value(tr.states.col(0));
  double prev = h0;
  double worst = 0;
  for (Eigen::Index k = 1; k < n; ++k) {
    double h = cq.value(tr.states.col(k));
    if (cq.angle_valued) {
      // Branch jumps come in integer multiples of branch_period, while the
      // true per-step change is tiny at the dt used by the checks, so
      // snapping to the previous value modulo the period recovers the
      // continuous branch.
      h -= cq.branch_period * std::round((h - prev) / cq.branch_period);
    }
    worst = std::max(worst, std::abs(h - h0));
    prev = h;
  }
  return worst;
}

}  // namespace conserva
