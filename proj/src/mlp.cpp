#include "conserva/mlp.hpp"

#include "conserva/common.hpp"

namespace conserva {

// Const-correct views into the flat parameter (or gradient) block.
struct MlpViews {
  Eigen::Map<Mat> w1, w2;
  Eigen::Map<Vec> b1, b2, w3;
  double* b3;

  MlpViews(double* t, int in, int h1, int h2)
      : w1(t, h1, in),
        b1(t + h1 * in, h1),
        w2(t + h1 * in + h1, h2, h1),
        b2(t + h1 * in + h1 + h2 * h1, h2),
        w3(t + h1 * in + h1 + h2 * h1 + h2, h2),
        b3(t + h1 * in + h1 + h2 * h1 + h2 + h2) {}

  static int size(int in, int h1, int h2) {
    return h1 * in + h1 + h2 * h1 + h2 + h2 + 1;
  }
};

namespace {

// silu(x) = x * s, s = sigmoid(x).
// silu'(x)  = s * (1 + x * (1 - s))
// silu''(x) = s * (1 - s) * (2 + x * (1 - 2 s))
void silu_tables(const Mat& pre, Mat& a, Mat& sp, Mat& spp) {
  a.resizeLike(pre);
  sp.resizeLike(pre);
  spp.resizeLike(pre);
  const double* p = pre.data();
  double* pa = a.data();
  double* ps = sp.data();
  double* pp = spp.data();
  const Eigen::Index n = pre.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = p[i];
    const double s = 1.0 / (1.0 + std::exp(-x));
    pa[i] = x * s;
    ps[i] = s * (1.0 + x * (1.0 - s));
    pp[i] = s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s));
  }
}

}  // namespace

Mlp::Mlp(int in, int h1, int h2, RngStream& rng) : in_(in), h1_(h1), h2_(h2) {
  if (in < 1 || h1 < 1 || h2 < 1) throw ConfigError("mlp: bad shape");
  theta_ = Vec::Zero(MlpViews::size(in, h1, h2));
  MlpViews v(theta_.data(), in, h1, h2);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(h1));
  const double s3 = 1.0 / std::sqrt(static_cast<double>(h2));
  for (Eigen::Index i = 0; i < v.w1.size(); ++i)
    v.w1.data()[i] = rng.uniform(-s1, s1);
  for (Eigen::Index i = 0; i < v.w2.size(); ++i)
    v.w2.data()[i] = rng.uniform(-s2, s2);
  for (Eigen::Index i = 0; i < v.w3.size(); ++i)
    v.w3.data()[i] = rng.uniform(-s3, s3);
  // biases stay zero
}

void Mlp::forward(const Mat& x, MlpTape& tape) const {
  if (x.rows() != in_) throw ConfigError("mlp: input dimension mismatch");
  const MlpViews v(const_cast<double*>(theta_.data()), in_, h1_, h2_);
  tape.x = x;
  tape.pre1.noalias() = v.w1 * x;
  tape.pre1.colwise() += v.b1;
  silu_tables(tape.pre1, tape.a1, tape.sp1, tape.spp1);
  tape.pre2.noalias() = v.w2 * tape.a1;
  tape.pre2.colwise() += v.b2;
  silu_tables(tape.pre2, tape.a2, tape.sp2, tape.spp2);
}

Vec Mlp::values(const MlpTape& tape) const {
  const MlpViews v(const_cast<double*>(theta_.data()), in_, h1_, h2_);
  Vec h = tape.a2.transpose() * v.w3;
  h.array() += *v.b3;
  return h;
}

void Mlp::input_grad(MlpTape& tape, Mat& g) const {
  const MlpViews v(const_cast<double*>(theta_.data()), in_, h1_, h2_);
  // dH/dpre2 = w3 (.) silu'(pre2), back through W2, silu'(pre1), W1.
  tape.t2 = (tape.sp2.array().colwise() * v.w3.array()).matrix();
  tape.t1.noalias() = v.w2.transpose() * tape.t2;
  tape.t1.array() *= tape.sp1.array();
  g.noalias() = v.w1.transpose() * tape.t1;
}

void Mlp::loss_param_grad(MlpTape& tape, const Vec& alpha, const Mat& u,
                          Eigen::Ref<Vec> grad) const {
  const MlpViews v(const_cast<double*>(theta_.data()), in_, h1_, h2_);
  if (grad.size() != theta_.size())
    throw ConfigError("mlp: gradient buffer has wrong size");
  MlpViews g(grad.data(), in_, h1_, h2_);

  // Tangent sweep: directional derivative of the forward pass along U.
  tape.dpre1.noalias() = v.w1 * u;
  tape.da1 = (tape.sp1.array() * tape.dpre1.array()).matrix();
  tape.dpre2.noalias() = v.w2 * tape.da1;
  tape.da2 = (tape.sp2.array() * tape.dpre2.array()).matrix();

  // Head: L = sum_j alpha_j (w3 . a2_j + b3) + sum_j (w3 . da2_j).
  g.w3.noalias() += tape.a2 * alpha + tape.da2.rowwise().sum();
  *g.b3 += alpha.sum();

  // Adjoints of a2 and of the tangent da2.
  tape.abar2.noalias() = v.w3 * alpha.transpose();        // h2 x B
  // dbar2 == adjoint of da2 is w3 broadcast over columns.
  // pbar2 = silu'(pre2) (.) abar2 + silu''(pre2) (.) dpre2 (.) dbar2
  tape.pbar2 = (tape.sp2.array() * tape.abar2.array() +
                (tape.spp2.array() * tape.dpre2.array()).colwise() *
                    v.w3.array())
                   .matrix();
  tape.dbar2 =
      (tape.sp2.array().colwise() * v.w3.array()).matrix();  // silu'(.)dbar2

  g.w2.noalias() += tape.pbar2 * tape.a1.transpose() +
                    tape.dbar2 * tape.da1.transpose();
  g.b2.noalias() += tape.pbar2.rowwise().sum();

  tape.abar1.noalias() = v.w2.transpose() * tape.pbar2;
  tape.dbar1.noalias() = v.w2.transpose() * tape.dbar2;
  tape.pbar1 = (tape.sp1.array() * tape.abar1.array() +
                tape.spp1.array() * tape.dpre1.array() * tape.dbar1.array())
                   .matrix();
  tape.dbar1.array() *= tape.sp1.array();  // now silu'(pre1) (.) dbar1

  g.w1.noalias() += tape.pbar1 * tape.x.transpose() +
                    tape.dbar1 * u.transpose();
  g.b1.noalias() += tape.pbar1.rowwise().sum();
}

double Mlp::value_at(const Vec& x) const {
  MlpTape tape;
  forward(x, tape);
  return values(tape)[0];
}

Vec Mlp::grad_at(const Vec& x) const {
  MlpTape tape;
  forward(x, tape);
  Mat g;
  input_grad(tape, g);
  return g.col(0);
}

}  // namespace conserva
