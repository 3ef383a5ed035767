// Reverse-Polish formula grammar over a small set of variables, with eight
// unary and four binary operations:
//
//   Q x^2   R sqrt(x)   I 1/x     O 2x
//   o x/2   N -x        L ln(x)   T arctan(x)
//   +       -           *         / (guarded)
//
// Formulas are compact token strings ("ab+Q" is (a+b)^2). Evaluation is
// forward-mode over fixed-width dual numbers so a single pass yields the
// value and the gradient in every variable. Domain violations (sqrt of a
// negative, log of a non-positive, division by ~0) mark the formula
// inapplicable at that point rather than raising.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace conserva {

constexpr int kMaxVars = 8;
constexpr int kMaxFormulaLen = 15;

enum class Op : std::uint8_t {
  kVar,
  kSquare,
  kSqrt,
  kInverse,
  kDouble,
  kHalf,
  kNegate,
  kLog,
  kArctan,
  kAdd,
  kSubtract,
  kMultiply,
  kDivide,
};

int op_arity(Op op);
char op_char(Op op);  // canonical token character (kVar has none)

// A compiled formula: fixed-size so enumeration never allocates.
struct Program {
  std::array<Op, kMaxFormulaLen> op{};
  std::array<std::uint8_t, kMaxFormulaLen> var{};  // for kVar slots
  int len = 0;
};

struct Grammar {
  std::string var_chars;  // one token character per variable, e.g. "xy"
  std::string unary = "QRIOoNLT";
  std::string binary = "+-*/";

  int vars() const { return static_cast<int>(var_chars.size()); }
  Op unary_op(int i) const;
  Op binary_op(int i) const;

  // Token-string round trip. compile throws ConfigError on malformed input
  // (unknown token, stack underflow, or leftovers).
  Program compile(const std::string& rpn) const;
  std::string rpn_of(const Program& p) const;
  // Human-readable infix with the given variable display names.
  std::string pretty(const Program& p,
                     const std::vector<std::string>& names) const;
};

// Value-only evaluation. Returns false when inapplicable at this point.
bool eval_value(const Program& p, const double* vars, double* out);

// Value + gradient in all n_vars variables (forward-mode duals).
bool eval_dual(const Program& p, const double* vars, int n_vars, double* out,
               double* grad);

}  // namespace conserva
