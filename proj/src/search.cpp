#include "conserva/search.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "conserva/common.hpp"

namespace conserva {

namespace {

constexpr std::uint64_t kProbeStream = 0x9e0b;
constexpr double kNormFloor = 1e-12;

double sgn(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

// Which state index feeds each (part, slot), plus per-slot abs flags.
struct Layout {
  int parts = 1, vars = 0;
  std::vector<int> idx;      // parts * vars, row-major by part
  std::vector<char> abs_f;   // vars
  int at(int part, int v) const { return idx[part * vars + v]; }
};

Layout make_layout(const SystemSpec& sys, const WrapperSpec& w) {
  Layout lay;
  switch (w.kind) {
    case WrapperKind::kPlain: {
      if (sys.dim > kMaxVars)
        throw ConfigError("plain wrapper: state has too many dimensions (" +
                          std::to_string(sys.dim) + " > " +
                          std::to_string(kMaxVars) + ")");
      lay.parts = 1;
      lay.vars = sys.dim;
      lay.idx.resize(sys.dim);
      std::iota(lay.idx.begin(), lay.idx.end(), 0);
      lay.abs_f.assign(sys.dim, 0);
      return lay;
    }
    case WrapperKind::kBodySum: {
      if (sys.name != "threebody-aug")
        throw ConfigError(
            "body-sum wrapper needs the augmented three-body system");
      lay.parts = 3;
      lay.vars = 5;
      // Body b gets its own coordinates plus the cyclic pair separation
      // r(b, b+1): body 1 -> r12, body 2 -> r23, body 3 -> r13.
      constexpr int r_of_body[3] = {12, 14, 13};
      for (int b = 0; b < 3; ++b) {
        for (int k = 0; k < 4; ++k) lay.idx.push_back(4 * b + k);
        lay.idx.push_back(r_of_body[b]);
      }
      lay.abs_f.assign(5, 0);
      return lay;
    }
    case WrapperKind::kGridSum: {
      if (!sys.is_pde())
        throw ConfigError("grid-sum wrapper needs a grid system");
      const GridLayout& g = *sys.grid;
      std::vector<int> feats = w.grid_features;
      if (feats.empty()) {
        feats.resize(g.exposed_fields);
        std::iota(feats.begin(), feats.end(), 0);
      }
      if (static_cast<int>(feats.size()) > kMaxVars)
        throw ConfigError("grid-sum wrapper: too many features");
      lay.parts = g.points;
      lay.vars = static_cast<int>(feats.size());
      for (int f : feats)
        if (f < 0 || f >= g.exposed_fields)
          throw ConfigError("grid-sum wrapper: bad feature index");
      for (int p = 0; p < g.points; ++p)
        for (int f : feats) lay.idx.push_back(g.fields_per_point * p + f);
      for (int f : feats) lay.abs_f.push_back(g.abs_feature[f] ? 1 : 0);
      return lay;
    }
  }
  throw ConfigError("bad wrapper kind");
}

// Cached evaluation data: per probe point and part, the slot values, the
// flow components chained through any abs (f * sign), and the squared sign
// mask (so |grad H| ignores slots pinned at an abs kink).
struct Probes {
  int points = 0, parts = 0, vars = 0;
  std::vector<double> vars_v, fproj, smask;
  std::vector<double> fnorm;
  const double* slot(int point, int part) const {
    return vars_v.data() + (static_cast<std::size_t>(point) * parts + part) * vars;
  }
  std::size_t off(int point, int part) const {
    return (static_cast<std::size_t>(point) * parts + part) * vars;
  }
};

Probes build_probes(const SystemSpec& sys, const SampleBatch& data,
                    const Layout& lay, int want, std::uint64_t seed) {
  const Eigen::Index total = data.states.cols();
  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  RngStream rng(seed, kProbeStream);
  for (Eigen::Index i = 0; i + 1 < total; ++i) {
    const auto j = i + static_cast<Eigen::Index>(rng.below(total - i));
    std::swap(order[i], order[j]);
  }

  Probes pr;
  pr.parts = lay.parts;
  pr.vars = lay.vars;
  for (int c : order) {
    if (pr.points >= want) break;
    const double fn = data.fields.col(c).norm();
    if (fn < kNormFloor) continue;  // cannot normalize the flow here
    pr.fnorm.push_back(fn);
    for (int part = 0; part < lay.parts; ++part)
      for (int v = 0; v < lay.vars; ++v) {
        const double raw = data.states(lay.at(part, v), c);
        const double s = lay.abs_f[v] ? sgn(raw) : 1.0;
        pr.vars_v.push_back(lay.abs_f[v] ? std::abs(raw) : raw);
        pr.fproj.push_back(data.fields(lay.at(part, v), c) * s);
        pr.smask.push_back(s * s);
      }
    ++pr.points;
  }
  if (pr.points < 32)
    throw NumericError("search: not enough usable probe points in the batch");
  return pr;
}

struct PointEval {
  double value = 0, num = 0, gsq = 0;
  bool applicable = false;
};

inline PointEval eval_point(const Probes& pr, int point, const Program& prog) {
  PointEval ev;
  double val, grad[kMaxVars];
  for (int part = 0; part < pr.parts; ++part) {
    if (!eval_dual(prog, pr.slot(point, part), pr.vars, &val, grad))
      return ev;  // inapplicable
    ev.value += val;
    const std::size_t o = pr.off(point, part);
    for (int v = 0; v < pr.vars; ++v) {
      ev.num += pr.fproj[o + v] * grad[v];
      ev.gsq += pr.smask[o + v] * grad[v] * grad[v];
    }
  }
  ev.applicable = true;
  return ev;
}

// Value-only variant for the duplicate/constancy probes.
inline bool eval_point_value(const Probes& pr, int point, const Program& prog,
                             double* out) {
  double acc = 0, val;
  for (int part = 0; part < pr.parts; ++part) {
    if (!eval_value(prog, pr.slot(point, part), &val)) return false;
    acc += val;
  }
  *out = acc;
  return true;
}

// Formula values over the first n probe points, with applicability mask and
// moments for the constancy screen.
struct ValueSample {
  std::vector<double> vals;
  std::vector<char> mask;
  int m = 0;
  double mean = 0, sd = 0;
  bool constant(double rel) const {
    return m >= 8 && sd < rel * (1.0 + std::abs(mean));
  }
};

ValueSample sample_values(const Probes& pr, const Program& prog, int n) {
  ValueSample s;
  s.vals.assign(n, 0.0);
  s.mask.assign(n, 0);
  double sum = 0, sum2 = 0;
  for (int p = 0; p < n; ++p) {
    double v;
    if (!eval_point_value(pr, p, prog, &v)) continue;
    s.vals[p] = v;
    s.mask[p] = 1;
    ++s.m;
    sum += v;
    sum2 += v * v;
  }
  if (s.m > 0) {
    s.mean = sum / s.m;
    s.sd = std::sqrt(std::max(0.0, sum2 / s.m - s.mean * s.mean));
  }
  return s;
}

// Least-squares affine fit u ~ a*w + b over masked points; true when the
// residual is negligible against u's own spread.
bool affine_duplicate(const std::vector<double>& u, const std::vector<char>& mu,
                      const std::vector<double>& w, const std::vector<char>& mw,
                      double rel_tol) {
  int m = 0;
  double su = 0, sw = 0, suu = 0, sww = 0, suw = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!mu[i] || !mw[i]) continue;
    ++m;
    su += u[i];
    sw += w[i];
    suu += u[i] * u[i];
    sww += w[i] * w[i];
    suw += u[i] * w[i];
  }
  if (m < 8) return false;
  const double mean_u = su / m, mean_w = sw / m;
  const double var_u = suu / m - mean_u * mean_u;
  const double var_w = sww / m - mean_w * mean_w;
  const double cov = suw / m - mean_u * mean_w;
  if (var_w <= 0) return false;
  const double a = cov / var_w;
  // rms residual of u - (a w + b) with the optimal b:
  const double resid2 = std::max(0.0, var_u - a * cov);
  const double spread = std::sqrt(std::max(var_u, 0.0));
  return std::sqrt(resid2) <= rel_tol * (spread + 1e-300);
}

struct VerifyStats {
  bool pass = false;
  double worst = 0;
  int applicable = 0;
  int checked = 0;
};

VerifyStats full_verify(const Probes& pr, const Program& prog,
                        const SearchConfig& cfg) {
  VerifyStats st;
  st.checked = pr.points;
  double worst_grad = 0;
  for (int p = 0; p < pr.points; ++p) {
    const PointEval ev = eval_point(pr, p, prog);
    if (!ev.applicable) continue;
    ++st.applicable;
    const double gn = std::sqrt(ev.gsq);
    worst_grad = std::max(worst_grad, gn);
    if (gn < kNormFloor) continue;  // no measurable direction here
    const double resid = std::abs(ev.num) / (pr.fnorm[p] * gn);
    st.worst = std::max(st.worst, resid);
    if (st.worst >= cfg.accept_eps) return st;  // already failed
  }
  st.pass = st.applicable * 2 > pr.points &&
            st.worst < cfg.accept_eps &&
            worst_grad >= cfg.const_grad_eps;
  return st;
}

}  // namespace

std::string wrapper_name(WrapperKind k) {
  switch (k) {
    case WrapperKind::kPlain: return "plain";
    case WrapperKind::kBodySum: return "body-sum";
    case WrapperKind::kGridSum: return "grid-sum";
  }
  throw ConfigError("bad wrapper kind");
}

WrapperKind wrapper_from_name(const std::string& name) {
  if (name == "plain") return WrapperKind::kPlain;
  if (name == "body-sum") return WrapperKind::kBodySum;
  if (name == "grid-sum") return WrapperKind::kGridSum;
  throw ConfigError("unknown wrapper: " + name);
}

WrapperKind default_wrapper(const SystemSpec& sys) {
  if (sys.is_pde()) return WrapperKind::kGridSum;
  if (sys.name == "threebody-aug") return WrapperKind::kBodySum;
  return WrapperKind::kPlain;
}

std::vector<std::string> wrapper_slot_names(const SystemSpec& sys,
                                            const WrapperSpec& w) {
  switch (w.kind) {
    case WrapperKind::kPlain:
      return sys.dim_names;
    case WrapperKind::kBodySum:
      return {"x", "y", "vx", "vy", "r"};
    case WrapperKind::kGridSum: {
      const GridLayout& g = *sys.grid;
      std::vector<int> feats = w.grid_features;
      if (feats.empty()) {
        feats.resize(g.exposed_fields);
        std::iota(feats.begin(), feats.end(), 0);
      }
      std::vector<std::string> names;
      for (int f : feats)
        names.push_back(g.abs_feature[f] ? "|" + g.feature_names[f] + "|"
                                         : g.feature_names[f]);
      return names;
    }
  }
  throw ConfigError("bad wrapper kind");
}

Grammar default_grammar(const SystemSpec& sys, const WrapperSpec& w) {
  const Layout lay = make_layout(sys, w);
  Grammar g;
  g.var_chars = std::string("abcdefgh").substr(0, lay.vars);
  return g;
}

ScalarField wrapped_field(const SystemSpec& sys, const Grammar& g,
                          const WrapperSpec& w, const Program& prog,
                          const std::string& label) {
  const Layout lay = make_layout(sys, w);
  if (g.vars() != lay.vars)
    throw ConfigError("wrapped_field: grammar/wrapper variable mismatch");
  ScalarField f;
  f.label = label;
  f.value = [lay, prog](const Vec& z) {
    double vars[kMaxVars], val, acc = 0;
    for (int part = 0; part < lay.parts; ++part) {
      for (int v = 0; v < lay.vars; ++v) {
        const double raw = z[lay.at(part, v)];
        vars[v] = lay.abs_f[v] ? std::abs(raw) : raw;
      }
      if (!eval_value(prog, vars, &val))
        throw NumericError("formula inapplicable at state");
      acc += val;
    }
    return acc;
  };
  f.grad = [lay, prog](const Vec& z) {
    double vars[kMaxVars], grad[kMaxVars], val;
    Vec out = Vec::Zero(z.size());
    for (int part = 0; part < lay.parts; ++part) {
      for (int v = 0; v < lay.vars; ++v) {
        const double raw = z[lay.at(part, v)];
        vars[v] = lay.abs_f[v] ? std::abs(raw) : raw;
      }
      if (!eval_dual(prog, vars, lay.vars, &val, grad))
        throw NumericError("formula inapplicable at state");
      for (int v = 0; v < lay.vars; ++v) {
        const double raw = z[lay.at(part, v)];
        const double s = lay.abs_f[v] ? sgn(raw) : 1.0;
        out[lay.at(part, v)] += s * grad[v];
      }
    }
    return out;
  };
  return f;
}

SearchResult symbolic_search(const SystemSpec& sys, const SampleBatch& data,
                             const Grammar& grammar, const WrapperSpec& wrapper,
                             const SearchConfig& cfg) {
  const Layout lay = make_layout(sys, wrapper);
  if (grammar.vars() != lay.vars)
    throw ConfigError("search: grammar has " + std::to_string(grammar.vars()) +
                      " variables, wrapper expects " + std::to_string(lay.vars));
  if (data.states.rows() != sys.dim)
    throw ConfigError("search: sample dimension does not match system");
  if (cfg.verify_points < 32) throw ConfigError("search: verify_points too low");

  const Probes probes =
      build_probes(sys, data, lay, cfg.verify_points, cfg.seed);
  const int n_fast = std::min(cfg.fast_points, probes.points);
  const int n_dup = std::min(cfg.dup_points, probes.points);

  IndependenceConfig icfg = cfg.indep;
  icfg.seed = cfg.seed;

  const std::vector<std::string> names = wrapper_slot_names(sys, wrapper);

  SearchResult res;
  std::vector<ScalarField> accepted_fields;
  std::vector<std::vector<double>> acc_vals;
  std::vector<std::vector<char>> acc_mask;

  Enumerator en(grammar, cfg.max_len);
  int cur_len = 0;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  bool stopped = false;
  while (en.next()) {
    if (en.length() != cur_len) {
      res.completed_length = cur_len;
      if (cfg.target_count > 0 &&
          static_cast<int>(res.accepted.size()) >= cfg.target_count) {
        res.reached_target = true;
        stopped = true;
        break;
      }
      cur_len = en.length();
    }
    if (cfg.time_budget_s > 0 && (res.scanned & 0xffff) == 0 &&
        elapsed() > cfg.time_budget_s) {
      res.timed_out = true;
      stopped = true;
      break;
    }
    ++res.scanned;
    const Program& prog = en.program();

    // --- stage 1: fast reject on a few points, plus flat-gradient screen.
    int applicable = 0;
    double max_grad = 0;
    bool reject = false;
    for (int p = 0; p < n_fast && !reject; ++p) {
      const PointEval ev = eval_point(probes, p, prog);
      if (!ev.applicable) continue;
      ++applicable;
      const double gn = std::sqrt(ev.gsq);
      max_grad = std::max(max_grad, gn);
      if (gn >= kNormFloor &&
          std::abs(ev.num) / (probes.fnorm[p] * gn) > cfg.accept_eps)
        reject = true;
    }
    if (reject || applicable == 0 || max_grad < cfg.const_grad_eps) continue;

    // --- stage 2+3: sampled values; constancy and affine-duplicate screens.
    const ValueSample vs = sample_values(probes, prog, n_dup);
    if (vs.m >= 8) {
      if (vs.constant(cfg.const_value_rel)) continue;
      bool dup = false;
      for (std::size_t i = 0; i < acc_vals.size() && !dup; ++i)
        dup = affine_duplicate(vs.vals, vs.mask, acc_vals[i], acc_mask[i],
                               cfg.affine_rel);
      if (dup) {
        ++res.duplicates;
        continue;
      }
    }

    // --- stage 4: full verification.
    const VerifyStats st = full_verify(probes, prog, cfg);
    if (!st.pass) continue;

    // --- stage 5: independence against the accepted set.
    const std::string rpn = grammar.rpn_of(prog);
    ScalarField cand = wrapped_field(sys, grammar, wrapper, prog, rpn);
    bool indep = true;
    if (!accepted_fields.empty()) {
      indep = cfg.indep_method == 'A'
                  ? independent_method_a(accepted_fields, cand, data.states, icfg)
                  : independent_method_b(accepted_fields, cand, data.states, icfg);
    }

    FoundFormula ff;
    ff.rpn = rpn;
    ff.pretty = grammar.pretty(prog, names);
    ff.max_residual = st.worst;
    ff.stream_index = en.index();
    ff.length = en.length();
    if (!indep) {
      res.dependent.push_back(std::move(ff));
      continue;
    }
    res.accepted.push_back(std::move(ff));
    accepted_fields.push_back(std::move(cand));
    acc_vals.push_back(vs.vals);
    acc_mask.push_back(vs.mask);
  }

  if (!stopped) {
    res.completed_length = cfg.max_len;
    if (cfg.target_count > 0 &&
        static_cast<int>(res.accepted.size()) >= cfg.target_count)
      res.reached_target = true;
  }
  res.seconds = elapsed();
  return res;
}

VerifyOutcome verify_formula(const SystemSpec& sys, const SampleBatch& data,
                             const Grammar& grammar, const WrapperSpec& wrapper,
                             const std::string& rpn, const SearchConfig& cfg) {
  const Layout lay = make_layout(sys, wrapper);
  if (grammar.vars() != lay.vars)
    throw ConfigError("verify: grammar/wrapper variable mismatch");
  const Probes probes =
      build_probes(sys, data, lay, cfg.verify_points, cfg.seed);
  const Program prog = grammar.compile(rpn);
  const VerifyStats st = full_verify(probes, prog, cfg);
  // A formula whose sampled values never move is constant on the data
  // manifold even when its token string is not syntactically constant; the
  // search rejects those early and this helper must agree with it.
  const ValueSample vs =
      sample_values(probes, prog, std::min(cfg.dup_points, probes.points));
  VerifyOutcome out;
  out.conserved = st.pass && !vs.constant(cfg.const_value_rel);
  out.max_residual = st.worst;
  out.applicable = st.applicable;
  out.points = st.checked;
  return out;
}

}  // namespace conserva
