// Exhaustive ordered enumeration of RPN formulas.
//
// Global order: token length ascending; within a length, arity templates in
// lexicographic order (digits 0 < 1 < 2); within a template, an odometer
// over the token choice at each slot with the leftmost slot most
// significant. Slots of arity 0/1/2 draw from the grammar's variables,
// unary, and binary operator lists in their stored order.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "conserva/grammar.hpp"

namespace conserva {

// Valid arity strings of exactly `len` tokens, lexicographic. A string is
// valid when every operator finds its operands and exactly one value
// remains at the end.
std::vector<std::string> templates_of_length(int len);

// Formula counts via DP over (position, stack depth); exact in uint64 for
// every budget used here.
std::uint64_t count_formulas(int n_vars, int n_unary, int n_binary, int len);
std::uint64_t count_formulas_upto(int n_vars, int n_unary, int n_binary,
                                  int max_len);

class Enumerator {
 public:
  Enumerator(const Grammar& grammar, int max_len);

  // Advance to the next formula. Returns false once the budget is spent.
  bool next();

  const Program& program() const { return prog_; }
  int length() const { return len_; }
  std::uint64_t index() const { return index_; }  // 1-based stream position

 private:
  bool load_template();  // build prog_ from the current template + odometer
  const Grammar* g_;
  int max_len_;
  int len_ = 0;
  std::vector<std::string> templates_;
  std::size_t tmpl_ = 0;
  std::array<int, kMaxFormulaLen> choice_{};
  bool fresh_template_ = true;
  std::uint64_t index_ = 0;
  Program prog_;
};

}  // namespace conserva
