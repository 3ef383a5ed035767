// Gaussian-mixture field profiles and the grid-state builders for the two
// PDE systems. Derivatives of the mixtures are analytic (Hermite recurrence),
// so grid states carry exact spatial derivatives of the sampled profile.
#pragma once

#include <complex>
#include <vector>

#include "conserva/systems.hpp"

namespace conserva {

struct GaussianMixture {
  std::vector<double> amp, mu, sigma;
  // k-th spatial derivative of sum_i amp_i * N(x; mu_i, sigma_i), where N is
  // the unit-mass Gaussian density.
  double deriv(double x, int k) const;
  double operator()(double x) const { return deriv(x, 0); }
};

// Per-sample mixture draw: amp ~ U[-amp_max, amp_max], mu ~ U[-mu_max, mu_max],
// sigma fixed.
GaussianMixture draw_mixture(RngStream& rng, int n_gauss, double amp_max,
                             double mu_max, double sigma);

// KdV: 6 stored fields per point (phi..phi_xxxxx).
Vec build_kdv_state(const GridLayout& g, const GaussianMixture& m);
Vec kdv_field(const GridLayout& g, const Vec& z);

// NLS: Re/Im parts are independent mixtures; 3 magnitude fields + 10 carrier
// Re/Im derivative fields per point.
Vec build_nls_state(const GridLayout& g, const GaussianMixture& re,
                    const GaussianMixture& im);
Vec nls_field(const GridLayout& g, const Vec& z, double kappa);

}  // namespace conserva
