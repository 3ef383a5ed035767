// Exhaustive symbolic search for conserved quantities.
//
// Formulas stream from the enumerator in a pinned global order and pass
// through a staged filter:
//
//   1. fast reject      residual check at a handful of cached points
//   2. triviality       near-zero gradients or near-constant sampled values
//   3. duplicate        affine match against already-accepted formulas
//   4. full verify      max residual over >= 10^3 points, and the formula
//                       must be applicable (in-domain) on more than half
//   5. independence     gradient-space test against the accepted set
//
// Survivors are accepted; formulas failing only stage 5 are recorded as
// dependent rediscoveries.
//
// A wrapper fixes how a formula over few variables becomes a scalar field
// over the full state: directly (plain), summed over bodies with the cyclic
// pair separation as a fifth slot (body-sum), or summed over grid points on
// selected features (grid-sum).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "conserva/enumerate.hpp"
#include "conserva/grammar.hpp"
#include "conserva/rank.hpp"
#include "conserva/systems.hpp"

namespace conserva {

enum class WrapperKind { kPlain, kBodySum, kGridSum };

std::string wrapper_name(WrapperKind k);
WrapperKind wrapper_from_name(const std::string& name);
WrapperKind default_wrapper(const SystemSpec& sys);

struct WrapperSpec {
  WrapperKind kind = WrapperKind::kPlain;
  std::vector<int> grid_features;  // grid-sum: exposed-feature indices
};

// Display names for the wrapper's formula variables.
std::vector<std::string> wrapper_slot_names(const SystemSpec& sys,
                                            const WrapperSpec& w);
// Grammar with one lowercase letter per slot and the full operator set.
Grammar default_grammar(const SystemSpec& sys, const WrapperSpec& w);

// The wrapped formula as a ScalarField on raw states (for rank tests and
// reports). value/grad throw NumericError where the formula is inapplicable.
ScalarField wrapped_field(const SystemSpec& sys, const Grammar& g,
                          const WrapperSpec& w, const Program& prog,
                          const std::string& label);

struct SearchConfig {
  int max_len = 9;
  int fast_points = 10;
  int dup_points = 32;
  int verify_points = 1000;
  double accept_eps = 1e-4;       // residual threshold, fast and full stages
  double const_grad_eps = 1e-10;  // gradient triviality floor
  double const_value_rel = 1e-12; // sampled-value constancy floor (relative)
  double affine_rel = 1e-9;       // duplicate fit residual (relative)
  char indep_method = 'B';        // 'A' or 'B'
  IndependenceConfig indep;
  int target_count = 0;     // stop at a length boundary once reached (0: scan all)
  double time_budget_s = 0; // 0: unlimited
  std::uint64_t seed = 0;
};

struct FoundFormula {
  std::string rpn;
  std::string pretty;
  double max_residual = 0;      // over the full verification set
  std::uint64_t stream_index = 0;
  int length = 0;
};

struct SearchResult {
  std::vector<FoundFormula> accepted;
  std::vector<FoundFormula> dependent;  // conserved but not independent
  std::uint64_t scanned = 0;
  int completed_length = 0;  // all formulas up to this length were examined
  std::uint64_t duplicates = 0;
  bool reached_target = false;
  bool timed_out = false;
  double seconds = 0;
};

SearchResult symbolic_search(const SystemSpec& sys, const SampleBatch& data,
                             const Grammar& grammar, const WrapperSpec& wrapper,
                             const SearchConfig& cfg);

// Stage-4 verification alone, for probing a specific formula.
struct VerifyOutcome {
  bool conserved = false;
  double max_residual = 0;
  int applicable = 0;
  int points = 0;
};
VerifyOutcome verify_formula(const SystemSpec& sys, const SampleBatch& data,
                             const Grammar& grammar, const WrapperSpec& wrapper,
                             const std::string& rpn, const SearchConfig& cfg);

}  // namespace conserva
