#include "conserva/pde.hpp"

#include <cmath>

#include "conserva/common.hpp"

namespace conserva {

namespace {
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}

double GaussianMixture::deriv(double x, int k) const {
  // d^k/dx^k N(x; mu, sigma) = N * (-1/sigma)^k * He_k((x-mu)/sigma) with the
  // probabilists' Hermite polynomials He_{j+1}(t) = t He_j(t) - j He_{j-1}(t).
  double acc = 0;
  for (std::size_t i = 0; i < amp.size(); ++i) {
    const double t = (x - mu[i]) / sigma[i];
    const double base = amp[i] * kInvSqrt2Pi / sigma[i] * std::exp(-0.5 * t * t);
    double he_prev = 0, he = 1;
    for (int j = 0; j < k; ++j) {
      const double he_next = t * he - j * he_prev;
      he_prev = he;
      he = he_next;
    }
    acc += base * std::pow(-1.0 / sigma[i], k) * he;
  }
  return acc;
}

GaussianMixture draw_mixture(RngStream& rng, int n_gauss, double amp_max,
                             double mu_max, double sigma) {
  GaussianMixture m;
  m.amp.resize(n_gauss);
  m.mu.resize(n_gauss);
  m.sigma.assign(n_gauss, sigma);
  for (int i = 0; i < n_gauss; ++i) {
    m.amp[i] = rng.uniform(-amp_max, amp_max);
    m.mu[i] = rng.uniform(-mu_max, mu_max);
  }
  return m;
}

Vec build_kdv_state(const GridLayout& g, const GaussianMixture& m) {
  Vec z(static_cast<Eigen::Index>(g.points) * g.fields_per_point);
  for (int i = 0; i < g.points; ++i) {
    const double x = g.x(i);
    for (int k = 0; k < g.fields_per_point; ++k)
      z[g.fields_per_point * i + k] = m.deriv(x, k);
  }
  return z;
}

Vec kdv_field(const GridLayout& g, const Vec& z) {
  const int fp = g.fields_per_point;
  if (z.size() != static_cast<Eigen::Index>(g.points) * fp)
    throw ConfigError("kdv_field: state size does not match grid");
  Vec f = Vec::Zero(z.size());
  for (int i = 0; i < g.points; ++i) {
    const double* p = z.data() + fp * i;
    // phi_t = -phi_xxx + 6 phi phi_x, differentiated through x by Leibniz.
    f[fp * i + 0] = -p[3] + 6 * p[0] * p[1];
    f[fp * i + 1] = -p[4] + 6 * (p[1] * p[1] + p[0] * p[2]);
    f[fp * i + 2] = -p[5] + 6 * (3 * p[1] * p[2] + p[0] * p[3]);
    // Higher derivatives are carrier coordinates: no dynamics are attached,
    // they only pin down the profile the exposed fields came from.
  }
  return f;
}

Vec build_nls_state(const GridLayout& g, const GaussianMixture& re,
                    const GaussianMixture& im) {
  const int fp = g.fields_per_point;
  Vec z(static_cast<Eigen::Index>(g.points) * fp);
  for (int i = 0; i < g.points; ++i) {
    const double x = g.x(i);
    double dr[5], di[5];
    for (int k = 0; k < 5; ++k) {
      dr[k] = re.deriv(x, k);
      di[k] = im.deriv(x, k);
    }
    double* p = z.data() + fp * i;
    for (int k = 0; k < 3; ++k) p[k] = std::hypot(dr[k], di[k]);
    for (int k = 0; k < 5; ++k) {
      p[3 + 2 * k] = dr[k];
      p[4 + 2 * k] = di[k];
    }
  }
  return z;
}

Vec nls_field(const GridLayout& g, const Vec& z, double kappa) {
  using cplx = std::complex<double>;
  const int fp = g.fields_per_point;
  if (z.size() != static_cast<Eigen::Index>(g.points) * fp)
    throw ConfigError("nls_field: state size does not match grid");
  const cplx ihalf(0, 0.5), iunit(0, 1);
  Vec f = Vec::Zero(z.size());
  for (int i = 0; i < g.points; ++i) {
    const double* p = z.data() + fp * i;
    cplx d[5];
    for (int k = 0; k < 5; ++k) d[k] = cplx(p[3 + 2 * k], p[4 + 2 * k]);
    // w = |psi|^2 = psi conj(psi); its spatial derivatives via Leibniz.
    const double w0 = std::norm(d[0]);
    const double w1 = 2 * std::real(d[1] * std::conj(d[0]));
    const double w2 =
        2 * std::real(d[2] * std::conj(d[0])) + 2 * std::norm(d[1]);
    // q = w psi and its derivatives, again Leibniz.
    const cplx q0 = w0 * d[0];
    const cplx q1 = w1 * d[0] + w0 * d[1];
    const cplx q2 = w2 * d[0] + 2.0 * w1 * d[1] + w0 * d[2];
    // psi_t = (i/2) psi_xx - i kappa |psi|^2 psi, differentiated through x.
    const cplx dt[3] = {ihalf * d[2] - iunit * kappa * q0,
                        ihalf * d[3] - iunit * kappa * q1,
                        ihalf * d[4] - iunit * kappa * q2};
    for (int k = 0; k < 3; ++k) {
      const double mag = p[k];
      // d|psi|/dt = Re(conj(psi) psi_t) / |psi|; zero magnitude means the
      // direction is undefined but the rate is bounded, so report 0.
      f[fp * i + k] =
          mag < 1e-300 ? 0.0 : std::real(std::conj(d[k]) * dt[k]) / mag;
    }
    // Carrier Re/Im derivative fields get no dynamics (same role as in KdV).
  }
  return f;
}

}  // namespace conserva
