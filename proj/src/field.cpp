#include "conserva/field.hpp"

#include <cmath>

#include "conserva/common.hpp"
#include "conserva/io.hpp"
#include "conserva/vendor_json.hpp"

namespace conserva {

namespace {

// Pair order (r12, r13, r23); body coordinates sit at 4b..4b+3.
constexpr int kPairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};

double sgn(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

}  // namespace

std::string arch_name(ArchKind k) {
  switch (k) {
    case ArchKind::kPlain: return "plain";
    case ArchKind::kAdditiveBody: return "additive";
    case ArchKind::kIntegralPde: return "integral";
  }
  throw ConfigError("arch_name: bad kind");
}

ArchKind arch_from_name(const std::string& name) {
  if (name == "plain") return ArchKind::kPlain;
  if (name == "additive") return ArchKind::kAdditiveBody;
  if (name == "integral") return ArchKind::kIntegralPde;
  throw ConfigError("unknown architecture: " + name);
}

ArchConfig ArchConfig::defaults_for(const SystemSpec& sys) {
  ArchConfig cfg;
  if (sys.is_pde())
    cfg.kind = ArchKind::kIntegralPde;
  else if (sys.name.rfind("threebody", 0) == 0)
    cfg.kind = ArchKind::kAdditiveBody;
  return cfg;
}

NeuralField::NeuralField(const SystemSpec& sys, const ArchConfig& cfg,
                         std::uint64_t seed, std::uint64_t stream)
    : kind_(cfg.kind), dim_(sys.dim) {
  RngStream rng(seed, stream);
  switch (kind_) {
    case ArchKind::kPlain:
      net_ = Mlp(sys.dim, cfg.hidden, cfg.hidden, rng);
      break;
    case ArchKind::kAdditiveBody:
      if (sys.name.rfind("threebody", 0) != 0)
        throw ConfigError("additive architecture expects a three-body system");
      bodies_ = 3;
      aug_r_ = sys.dim == 15;
      net_ = Mlp(4, cfg.sub_hidden, cfg.sub_hidden, rng);
      pair_ = Mlp(1, cfg.sub_hidden, cfg.sub_hidden, rng);
      break;
    case ArchKind::kIntegralPde:
      if (!sys.is_pde())
        throw ConfigError("integral architecture expects a grid system");
      grid_ = *sys.grid;
      net_ = Mlp(grid_.exposed_fields, cfg.sub_hidden, cfg.sub_hidden, rng);
      break;
  }
}

// Build sub-net input batches.
void NeuralField::expand(const Mat& z) const {
  const Eigen::Index b = z.cols();
  switch (kind_) {
    case ArchKind::kPlain:
      feat_ = z;
      break;
    case ArchKind::kAdditiveBody: {
      feat_.resize(4, 3 * b);
      pair_feat_.resize(1, 3 * b);
      for (Eigen::Index j = 0; j < b; ++j) {
        for (int body = 0; body < 3; ++body)
          feat_.col(3 * j + body) = z.col(j).segment(4 * body, 4);
        for (int p = 0; p < 3; ++p) {
          double r;
          if (aug_r_) {
            r = z(12 + p, j);
          } else {
            const int i = kPairs[p][0], k = kPairs[p][1];
            r = std::hypot(z(4 * i, j) - z(4 * k, j),
                           z(4 * i + 1, j) - z(4 * k + 1, j));
          }
          pair_feat_(0, 3 * j + p) = r;
        }
      }
      break;
    }
    case ArchKind::kIntegralPde: {
      const int n = grid_.points, fp = grid_.fields_per_point;
      const int nf = grid_.exposed_fields;
      feat_.resize(nf, static_cast<Eigen::Index>(n) * b);
      for (Eigen::Index j = 0; j < b; ++j)
        for (int i = 0; i < n; ++i)
          for (int f = 0; f < nf; ++f) {
            const double v = z(fp * i + f, j);
            feat_(f, n * j + i) = grid_.abs_feature[f] ? std::abs(v) : v;
          }
      break;
    }
  }
}

void NeuralField::value_grad_batch(const Mat& z, Vec& h, Mat& g) const {
  if (z.rows() != dim_) throw ConfigError("field: state dimension mismatch");
  const Eigen::Index b = z.cols();
  expand(z);
  net_.forward(feat_, tape_);
  const Vec hv = net_.values(tape_);
  net_.input_grad(tape_, sub_g_);

  switch (kind_) {
    case ArchKind::kPlain:
      h = hv;
      g = sub_g_;
      return;
    case ArchKind::kAdditiveBody: {
      pair_.forward(pair_feat_, pair_tape_);
      const Vec hp = pair_.values(pair_tape_);
      pair_.input_grad(pair_tape_, pair_g_);
      h.resize(b);
      g = Mat::Zero(dim_, b);
      for (Eigen::Index j = 0; j < b; ++j) {
        double acc = 0;
        for (int body = 0; body < 3; ++body) {
          acc += hv[3 * j + body];
          g.col(j).segment(4 * body, 4) = sub_g_.col(3 * j + body);
        }
        for (int p = 0; p < 3; ++p) {
          acc += hp[3 * j + p];
          const double dh = pair_g_(0, 3 * j + p);
          if (aug_r_) {
            g(12 + p, j) += dh;
          } else {
            const int i = kPairs[p][0], k = kPairs[p][1];
            const double dx = z(4 * i, j) - z(4 * k, j);
            const double dy = z(4 * i + 1, j) - z(4 * k + 1, j);
            const double r = pair_feat_(0, 3 * j + p);
            g(4 * i, j) += dh * dx / r;
            g(4 * i + 1, j) += dh * dy / r;
            g(4 * k, j) -= dh * dx / r;
            g(4 * k + 1, j) -= dh * dy / r;
          }
        }
        h[j] = acc;
      }
      return;
    }
    case ArchKind::kIntegralPde: {
      const int n = grid_.points, fp = grid_.fields_per_point;
      const int nf = grid_.exposed_fields;
      h = Vec::Zero(b);
      g = Mat::Zero(dim_, b);
      for (Eigen::Index j = 0; j < b; ++j)
        for (int i = 0; i < n; ++i) {
          h[j] += hv[n * j + i];
          for (int f = 0; f < nf; ++f) {
            const double zv = z(fp * i + f, j);
            const double s = grid_.abs_feature[f] ? sgn(zv) : 1.0;
            g(fp * i + f, j) = s * sub_g_(f, n * j + i);
          }
        }
      return;
    }
  }
}

double NeuralField::value_at(const Vec& z) const {
  Vec h;
  Mat g;
  value_grad_batch(z, h, g);
  return h[0];
}

Vec NeuralField::grad_at(const Vec& z) const {
  Vec h;
  Mat g;
  value_grad_batch(z, h, g);
  return g.col(0);
}

void NeuralField::loss_param_grad_batch(const Mat& z, const Vec& alpha,
                                        const Mat& u, Vec& grad) const {
  if (grad.size() != param_count())
    throw ConfigError("field: gradient buffer has wrong size");
  const Eigen::Index b = z.cols();
  expand(z);
  net_.forward(feat_, tape_);

  switch (kind_) {
    case ArchKind::kPlain:
      net_.loss_param_grad(tape_, alpha, u, grad);
      return;
    case ArchKind::kAdditiveBody: {
      Vec alpha_g(3 * b), alpha_h(3 * b);
      Mat u_g(4, 3 * b), u_h(1, 3 * b);
      for (Eigen::Index j = 0; j < b; ++j)
        for (int p = 0; p < 3; ++p) {
          alpha_g[3 * j + p] = alpha[j];
          alpha_h[3 * j + p] = alpha[j];
          u_g.col(3 * j + p) = u.col(j).segment(4 * p, 4);
          if (aug_r_) {
            u_h(0, 3 * j + p) = u(12 + p, j);
          } else {
            const int i = kPairs[p][0], k = kPairs[p][1];
            const double dx = z(4 * i, j) - z(4 * k, j);
            const double dy = z(4 * i + 1, j) - z(4 * k + 1, j);
            const double r = pair_feat_(0, 3 * j + p);
            u_h(0, 3 * j + p) = (dx * (u(4 * i, j) - u(4 * k, j)) +
                                 dy * (u(4 * i + 1, j) - u(4 * k + 1, j))) /
                                r;
          }
        }
      net_.loss_param_grad(tape_, alpha_g, u_g, grad.head(net_.param_count()));
      pair_.forward(pair_feat_, pair_tape_);
      pair_.loss_param_grad(pair_tape_, alpha_h, u_h,
                            grad.tail(pair_.param_count()));
      return;
    }
    case ArchKind::kIntegralPde: {
      const int n = grid_.points, fp = grid_.fields_per_point;
      const int nf = grid_.exposed_fields;
      Vec alpha_h(static_cast<Eigen::Index>(n) * b);
      Mat u_h(nf, static_cast<Eigen::Index>(n) * b);
      for (Eigen::Index j = 0; j < b; ++j)
        for (int i = 0; i < n; ++i) {
          alpha_h[n * j + i] = alpha[j];
          for (int f = 0; f < nf; ++f) {
            const double zv = z(fp * i + f, j);
            const double s = grid_.abs_feature[f] ? sgn(zv) : 1.0;
            u_h(f, n * j + i) = s * u(fp * i + f, j);
          }
        }
      net_.loss_param_grad(tape_, alpha_h, u_h, grad);
      return;
    }
  }
}

int NeuralField::param_count() const {
  int n = net_.param_count();
  if (kind_ == ArchKind::kAdditiveBody) n += pair_.param_count();
  return n;
}

Vec NeuralField::pack_params() const {
  Vec out(param_count());
  out.head(net_.param_count()) = net_.params();
  if (kind_ == ArchKind::kAdditiveBody)
    out.tail(pair_.param_count()) = pair_.params();
  return out;
}

void NeuralField::unpack_params(const Vec& theta) {
  if (theta.size() != param_count())
    throw ConfigError("field: parameter vector has wrong size");
  net_.params() = theta.head(net_.param_count());
  if (kind_ == ArchKind::kAdditiveBody)
    pair_.params() = theta.tail(pair_.param_count());
}

void NeuralField::save(const std::filesystem::path& json_path) const {
  const Vec theta = pack_params();
  auto blob_path = json_path;
  blob_path.replace_extension(".bin");
  write_f64_blob(blob_path,
                 std::vector<double>(theta.data(), theta.data() + theta.size()));
  nlohmann::json j = {
      {"arch", arch_name(kind_)},
      {"dim", dim_},
      {"net", {{"in", net_.in_dim()},
               {"h1", net_.hidden1()},
               {"h2", net_.hidden2()}}},
      {"params_file", blob_path.filename().string()},
      {"params_sha256", sha256_file(blob_path)},
  };
  if (kind_ == ArchKind::kAdditiveBody) {
    j["bodies"] = bodies_;
    j["aug_r"] = aug_r_;
    j["pair"] = {{"in", pair_.in_dim()},
                 {"h1", pair_.hidden1()},
                 {"h2", pair_.hidden2()}};
  }
  if (kind_ == ArchKind::kIntegralPde) {
    j["grid"] = {{"points", grid_.points},
                 {"fields_per_point", grid_.fields_per_point},
                 {"exposed_fields", grid_.exposed_fields},
                 {"feature_names", grid_.feature_names},
                 {"abs_feature", grid_.abs_feature},
                 {"x_min", grid_.x_min},
                 {"x_max", grid_.x_max}};
  }
  write_json(json_path, j);
}

NeuralField NeuralField::load(const std::filesystem::path& json_path) {
  const nlohmann::json j = require_json(json_path);
  NeuralField f;
  f.kind_ = arch_from_name(j.at("arch").get<std::string>());
  f.dim_ = j.at("dim").get<int>();
  RngStream dummy(0, 0);
  const auto& n = j.at("net");
  f.net_ = Mlp(n.at("in").get<int>(), n.at("h1").get<int>(),
               n.at("h2").get<int>(), dummy);
  if (f.kind_ == ArchKind::kAdditiveBody) {
    f.bodies_ = j.at("bodies").get<int>();
    f.aug_r_ = j.at("aug_r").get<bool>();
    const auto& p = j.at("pair");
    f.pair_ = Mlp(p.at("in").get<int>(), p.at("h1").get<int>(),
                  p.at("h2").get<int>(), dummy);
  }
  if (f.kind_ == ArchKind::kIntegralPde) {
    const auto& g = j.at("grid");
    f.grid_.points = g.at("points").get<int>();
    f.grid_.fields_per_point = g.at("fields_per_point").get<int>();
    f.grid_.exposed_fields = g.at("exposed_fields").get<int>();
    f.grid_.feature_names = g.at("feature_names").get<std::vector<std::string>>();
    f.grid_.abs_feature = g.at("abs_feature").get<std::vector<bool>>();
    f.grid_.x_min = g.at("x_min").get<double>();
    f.grid_.x_max = g.at("x_max").get<double>();
  }
  auto blob_path = json_path.parent_path() / j.at("params_file").get<std::string>();
  if (sha256_file(blob_path) != j.at("params_sha256").get<std::string>())
    throw ArtifactError("parameter blob checksum mismatch: " +
                        blob_path.string());
  const std::vector<double> data = read_f64_blob(blob_path);
  if (static_cast<int>(data.size()) != f.param_count())
    throw ArtifactError("parameter blob has wrong length: " +
                        blob_path.string());
  f.unpack_params(Eigen::Map<const Vec>(data.data(), data.size()));
  return f;
}

}  // namespace conserva
