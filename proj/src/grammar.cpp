#include "conserva/grammar.hpp"

#include <cmath>

#include "conserva/common.hpp"

namespace conserva {

namespace {

constexpr double kDivisionFloor = 1e-12;

struct OpInfo {
  char ch;
  int arity;
};

OpInfo info(Op op) {
  switch (op) {
    case Op::kVar: return {'?', 0};
    case Op::kSquare: return {'Q', 1};
    case Op::kSqrt: return {'R', 1};
    case Op::kInverse: return {'I', 1};
    case Op::kDouble: return {'O', 1};
    case Op::kHalf: return {'o', 1};
    case Op::kNegate: return {'N', 1};
    case Op::kLog: return {'L', 1};
    case Op::kArctan: return {'T', 1};
    case Op::kAdd: return {'+', 2};
    case Op::kSubtract: return {'-', 2};
    case Op::kMultiply: return {'*', 2};
    case Op::kDivide: return {'/', 2};
  }
  throw ConfigError("bad opcode");
}

Op op_from_char(char c) {
  switch (c) {
    case 'Q': return Op::kSquare;
    case 'R': return Op::kSqrt;
    case 'I': return Op::kInverse;
    case 'O': return Op::kDouble;
    case 'o': return Op::kHalf;
    case 'N': return Op::kNegate;
    case 'L': return Op::kLog;
    case 'T': return Op::kArctan;
    case '+': return Op::kAdd;
    case '-': return Op::kSubtract;
    case '*': return Op::kMultiply;
    case '/': return Op::kDivide;
    default: throw ConfigError(std::string("unknown operator token: ") + c);
  }
}

}  // namespace

int op_arity(Op op) { return info(op).arity; }
char op_char(Op op) { return info(op).ch; }

Op Grammar::unary_op(int i) const { return op_from_char(unary.at(i)); }
Op Grammar::binary_op(int i) const { return op_from_char(binary.at(i)); }

Program Grammar::compile(const std::string& rpn) const {
  if (rpn.empty() || rpn.size() > kMaxFormulaLen)
    throw ConfigError("formula length out of range: " + rpn);
  Program p;
  int stack = 0;
  for (char c : rpn) {
    const auto vpos = var_chars.find(c);
    if (vpos != std::string::npos) {
      p.op[p.len] = Op::kVar;
      p.var[p.len] = static_cast<std::uint8_t>(vpos);
      ++stack;
    } else {
      const Op op = op_from_char(c);
      // Operator characters shadowed by variable names are caught above;
      // reject operators the grammar does not include.
      const std::string& pool = op_arity(op) == 1 ? unary : binary;
      if (pool.find(c) == std::string::npos)
        throw ConfigError(std::string("operator not in grammar: ") + c);
      if (stack < op_arity(op))
        throw ConfigError("stack underflow in formula: " + rpn);
      stack -= op_arity(op) - 1;
      p.op[p.len] = op;
    }
    ++p.len;
  }
  if (stack != 1) throw ConfigError("formula leaves " + std::to_string(stack) +
                                    " values on the stack: " + rpn);
  return p;
}

std::string Grammar::rpn_of(const Program& p) const {
  std::string out;
  out.reserve(p.len);
  for (int i = 0; i < p.len; ++i)
    out += p.op[i] == Op::kVar ? var_chars.at(p.var[i]) : op_char(p.op[i]);
  return out;
}

std::string Grammar::pretty(const Program& p,
                            const std::vector<std::string>& names) const {
  std::vector<std::string> stack;
  for (int i = 0; i < p.len; ++i) {
    switch (p.op[i]) {
      case Op::kVar:
        stack.push_back(names.at(p.var[i]));
        break;
      case Op::kSquare: stack.back() = "(" + stack.back() + ")^2"; break;
      case Op::kSqrt: stack.back() = "sqrt(" + stack.back() + ")"; break;
      case Op::kInverse: stack.back() = "1/(" + stack.back() + ")"; break;
      case Op::kDouble: stack.back() = "2*(" + stack.back() + ")"; break;
      case Op::kHalf: stack.back() = "(" + stack.back() + ")/2"; break;
      case Op::kNegate: stack.back() = "-(" + stack.back() + ")"; break;
      case Op::kLog: stack.back() = "ln(" + stack.back() + ")"; break;
      case Op::kArctan: stack.back() = "arctan(" + stack.back() + ")"; break;
      default: {
        const std::string b = stack.back();
        stack.pop_back();
        stack.back() = "(" + stack.back() + " " + op_char(p.op[i]) + " " + b + ")";
      }
    }
  }
  return stack.back();
}

bool eval_value(const Program& p, const double* vars, double* out) {
  double st[kMaxFormulaLen + 1];
  int top = -1;
  for (int i = 0; i < p.len; ++i) {
    switch (p.op[i]) {
      case Op::kVar: st[++top] = vars[p.var[i]]; break;
      case Op::kSquare: st[top] *= st[top]; break;
      case Op::kSqrt:
        if (st[top] < 0) return false;
        st[top] = std::sqrt(st[top]);
        break;
      case Op::kInverse:
        if (std::abs(st[top]) < kDivisionFloor) return false;
        st[top] = 1.0 / st[top];
        break;
      case Op::kDouble: st[top] *= 2.0; break;
      case Op::kHalf: st[top] *= 0.5; break;
      case Op::kNegate: st[top] = -st[top]; break;
      case Op::kLog:
        if (st[top] <= 0) return false;
        st[top] = std::log(st[top]);
        break;
      case Op::kArctan: st[top] = std::atan(st[top]); break;
      case Op::kAdd: --top; st[top] += st[top + 1]; break;
      case Op::kSubtract: --top; st[top] -= st[top + 1]; break;
      case Op::kMultiply: --top; st[top] *= st[top + 1]; break;
      case Op::kDivide:
        --top;
        if (std::abs(st[top + 1]) < kDivisionFloor) return false;
        st[top] /= st[top + 1];
        break;
    }
  }
  *out = st[0];
  return std::isfinite(st[0]);
}

bool eval_dual(const Program& p, const double* vars, int n_vars, double* out,
               double* grad) {
  struct Dual {
    double v;
    double d[kMaxVars];
  };
  Dual st[kMaxFormulaLen + 1];
  int top = -1;

  auto unary_chain = [&](double v, double dv) {
    Dual& a = st[top];
    a.v = v;
    for (int k = 0; k < n_vars; ++k) a.d[k] *= dv;
  };

  for (int i = 0; i < p.len; ++i) {
    switch (p.op[i]) {
      case Op::kVar: {
        Dual& a = st[++top];
        a.v = vars[p.var[i]];
        for (int k = 0; k < n_vars; ++k) a.d[k] = 0;
        a.d[p.var[i]] = 1;
        break;
      }
      case Op::kSquare: unary_chain(st[top].v * st[top].v, 2 * st[top].v); break;
      case Op::kSqrt: {
        if (st[top].v < 0) return false;
        const double r = std::sqrt(st[top].v);
        if (r == 0) return false;  // derivative blows up at the boundary
        unary_chain(r, 0.5 / r);
        break;
      }
      case Op::kInverse: {
        if (std::abs(st[top].v) < kDivisionFloor) return false;
        const double inv = 1.0 / st[top].v;
        unary_chain(inv, -inv * inv);
        break;
      }
      case Op::kDouble: unary_chain(2 * st[top].v, 2.0); break;
      case Op::kHalf: unary_chain(0.5 * st[top].v, 0.5); break;
      case Op::kNegate: unary_chain(-st[top].v, -1.0); break;
      case Op::kLog: {
        if (st[top].v <= 0) return false;
        unary_chain(std::log(st[top].v), 1.0 / st[top].v);
        break;
      }
      case Op::kArctan:
        unary_chain(std::atan(st[top].v), 1.0 / (1.0 + st[top].v * st[top].v));
        break;
      case Op::kAdd: {
        --top;
        Dual& a = st[top];
        const Dual& b = st[top + 1];
        a.v += b.v;
        for (int k = 0; k < n_vars; ++k) a.d[k] += b.d[k];
        break;
      }
      case Op::kSubtract: {
        --top;
        Dual& a = st[top];
        const Dual& b = st[top + 1];
        a.v -= b.v;
        for (int k = 0; k < n_vars; ++k) a.d[k] -= b.d[k];
        break;
      }
      case Op::kMultiply: {
        --top;
        Dual& a = st[top];
        const Dual& b = st[top + 1];
        for (int k = 0; k < n_vars; ++k)
          a.d[k] = a.d[k] * b.v + a.v * b.d[k];
        a.v *= b.v;
        break;
      }
      case Op::kDivide: {
        --top;
        Dual& a = st[top];
        const Dual& b = st[top + 1];
        if (std::abs(b.v) < kDivisionFloor) return false;
        const double inv = 1.0 / b.v;
        const double q = a.v * inv;
        for (int k = 0; k < n_vars; ++k) a.d[k] = (a.d[k] - q * b.d[k]) * inv;
        a.v = q;
        break;
      }
    }
  }
  if (!std::isfinite(st[0].v)) return false;
  *out = st[0].v;
  for (int k = 0; k < n_vars; ++k) {
    if (!std::isfinite(st[0].d[k])) return false;
    grad[k] = st[0].d[k];
  }
  return true;
}

}  // namespace conserva
