// Hand-rolled two-hidden-layer SiLU perceptron with a scalar head.
//
// Everything is batched with samples as columns so the hot paths are level-3
// BLAS via Eigen. Besides values and input-space gradients, the net exposes
// the parameter gradient of the functional
//
//     sum_j [ alpha_j * H(x_j) + U_j . dH/dx(x_j) ]
//
// computed with one forward-over-reverse (tangent + adjoint) pass. That is
// the exact shape needed by losses that act on gradients of the network
// rather than on its values.
#pragma once

#include <Eigen/Dense>

#include "conserva/rng.hpp"

namespace conserva {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

// Scratch space reused across batches; matrices keep their allocation when
// the batch size repeats.
struct MlpTape {
  Mat x;                    // inputs as given (in x B)
  Mat pre1, a1, sp1, spp1;  // layer-1 preactivation, activation, silu', silu''
  Mat pre2, a2, sp2, spp2;
  Mat t1, t2;               // adjoint passes for input gradients
  Mat dpre1, da1, dpre2, da2;  // tangent (dual) forward along U
  Mat abar2, pbar2, dbar2, abar1, pbar1, dbar1;
};

class Mlp {
 public:
  Mlp() = default;
  // Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero, drawn
  // in a fixed parameter order from the given stream.
  Mlp(int in, int h1, int h2, RngStream& rng);

  int in_dim() const { return in_; }
  int hidden1() const { return h1_; }
  int hidden2() const { return h2_; }
  int param_count() const { return static_cast<int>(theta_.size()); }

  // Flat parameter block (layout: W1, b1, W2, b2, w3, b3); the optimizer
  // works directly on this vector.
  Vec& params() { return theta_; }
  const Vec& params() const { return theta_; }

  // Forward pass for a batch (columns = samples); fills the tape.
  void forward(const Mat& x, MlpTape& tape) const;

  // H for every column, from a completed forward pass.
  Vec values(const MlpTape& tape) const;

  // Input-space gradients (in x B), from a completed forward pass.
  void input_grad(MlpTape& tape, Mat& g) const;

  // Accumulate (+=) into grad (same flat layout as params()) the parameter
  // gradient of sum_j [alpha_j H(x_j) + U(:,j) . dH/dx(x_j)]. Requires the
  // tape of a forward pass over the same inputs.
  void loss_param_grad(MlpTape& tape, const Vec& alpha, const Mat& u,
                       Eigen::Ref<Vec> grad) const;

  // Convenience single-point evaluation (allocates; not for hot loops).
  double value_at(const Vec& x) const;
  Vec grad_at(const Vec& x) const;

 private:
  int in_ = 0, h1_ = 0, h2_ = 0;
  Vec theta_;

  friend struct MlpViews;
};

}  // namespace conserva
