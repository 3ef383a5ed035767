// A NeuralField is a trainable scalar field H(z) over a system's state
// space. Three architectures:
//
//   plain     one MLP on the raw state.
//   additive  three-body inductive bias: H = sum_b g(body_b) + sum_p h(r_p)
//             with one shared g over the 4 per-body coordinates and one
//             shared h over each pair separation.
//   integral  grid (PDE) bias: H = sum_points h(features(point)), one shared
//             h over the exposed per-point features.
//
// Feature maps are fixed (parameter-free), so parameter gradients of both
// values and state-space gradients reduce to sub-net calls with projected
// upstream vectors.
#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "conserva/mlp.hpp"
#include "conserva/systems.hpp"

namespace conserva {

enum class ArchKind { kPlain, kAdditiveBody, kIntegralPde };

std::string arch_name(ArchKind k);
ArchKind arch_from_name(const std::string& name);

struct ArchConfig {
  ArchKind kind = ArchKind::kPlain;
  int hidden = 256;       // plain width
  int sub_hidden = 64;    // additive / integral width
  // Default policy: PDE systems -> integral, three-body -> additive,
  // everything else -> plain.
  static ArchConfig defaults_for(const SystemSpec& sys);
};

class NeuralField {
 public:
  NeuralField() = default;
  // Fresh random init; every weight comes from the given seed/stream pair.
  NeuralField(const SystemSpec& sys, const ArchConfig& cfg, std::uint64_t seed,
              std::uint64_t stream);

  ArchKind kind() const { return kind_; }
  int state_dim() const { return dim_; }

  // Values and state-space gradients for a batch (columns = samples).
  void value_grad_batch(const Mat& z, Vec& h, Mat& g) const;

  double value_at(const Vec& z) const;
  Vec grad_at(const Vec& z) const;

  // Parameter gradient of sum_j [alpha_j H(z_j) + U(:,j) . dH/dz(z_j)],
  // accumulated (+=) into grad, which must have param_count() entries.
  void loss_param_grad_batch(const Mat& z, const Vec& alpha, const Mat& u,
                             Vec& grad) const;

  int param_count() const;
  Vec pack_params() const;
  void unpack_params(const Vec& theta);

  // Persistence: JSON descriptor + raw little-endian f64 parameter blob.
  void save(const std::filesystem::path& json_path) const;
  static NeuralField load(const std::filesystem::path& json_path);

 private:
  void expand(const Mat& z) const;

  ArchKind kind_ = ArchKind::kPlain;
  int dim_ = 0;
  // Additive-body bookkeeping.
  int bodies_ = 0;
  bool aug_r_ = false;  // pair separations are state coordinates
  // Integral bookkeeping.
  GridLayout grid_;

  Mlp net_;   // plain MLP, additive g, or integral h
  Mlp pair_;  // additive h (unused otherwise)

  mutable MlpTape tape_, pair_tape_;
  mutable Mat feat_, pair_feat_, sub_g_, pair_g_;
};

}  // namespace conserva
