#include "conserva/enumerate.hpp"

#include "conserva/common.hpp"

namespace conserva {

std::vector<std::string> templates_of_length(int len) {
  if (len < 1 || len > kMaxFormulaLen)
    throw ConfigError("templates_of_length: bad length");
  std::vector<std::string> out;
  std::string cur(len, '0');
  // Depth-first in lexicographic order over arity digits.
  auto rec = [&](auto&& self, int pos, int stack) -> void {
    if (pos == len) {
      if (stack == 1) out.push_back(cur);
      return;
    }
    // Pruning: each remaining token changes the stack by at most +1, so we
    // need stack + remaining >= final 1; operators can only shed one value
    // per token.
    for (int arity = 0; arity <= 2; ++arity) {
      if (stack < arity) break;  // higher arities need even more operands
      const int next = stack + 1 - arity;
      const int remaining = len - pos - 1;
      if (next > 1 + remaining) continue;  // can never shrink back to 1
      if (next < 1) continue;
      cur[pos] = static_cast<char>('0' + arity);
      self(self, pos + 1, next);
    }
    cur[pos] = '0';
  };
  rec(rec, 0, 0);
  return out;
}

std::uint64_t count_formulas(int n_vars, int n_unary, int n_binary, int len) {
  if (len < 1) return 0;
  // ways[s] = number of token prefixes of the current position leaving
  // stack depth s.
  std::vector<std::uint64_t> ways(len + 2, 0), next(len + 2, 0);
  ways[0] = 1;
  for (int pos = 0; pos < len; ++pos) {
    std::fill(next.begin(), next.end(), 0);
    for (int s = 0; s <= len; ++s) {
      if (!ways[s]) continue;
      if (s + 1 <= len + 1) next[s + 1] += ways[s] * n_vars;
      if (s >= 1) next[s] += ways[s] * n_unary;
      if (s >= 2) next[s - 1] += ways[s] * n_binary;
    }
    ways.swap(next);
  }
  return ways[1];
}

std::uint64_t count_formulas_upto(int n_vars, int n_unary, int n_binary,
                                  int max_len) {
  std::uint64_t total = 0;
  for (int len = 1; len <= max_len; ++len)
    total += count_formulas(n_vars, n_unary, n_binary, len);
  return total;
}

Enumerator::Enumerator(const Grammar& grammar, int max_len)
    : g_(&grammar), max_len_(max_len) {
  if (grammar.vars() < 1 || grammar.vars() > kMaxVars)
    throw ConfigError("enumerator: variable count out of range");
  if (max_len < 1 || max_len > kMaxFormulaLen)
    throw ConfigError("enumerator: bad length budget");
}

bool Enumerator::load_template() {
  const std::string& t = templates_[tmpl_];
  prog_.len = len_;
  for (int i = 0; i < len_; ++i) {
    const int arity = t[i] - '0';
    const int c = choice_[i];
    if (arity == 0) {
      prog_.op[i] = Op::kVar;
      prog_.var[i] = static_cast<std::uint8_t>(c);
    } else if (arity == 1) {
      prog_.op[i] = g_->unary_op(c);
    } else {
      prog_.op[i] = g_->binary_op(c);
    }
  }
  return true;
}

bool Enumerator::next() {
  while (true) {
    if (len_ == 0) {
      // First call: start at length 1.
      len_ = 1;
      templates_ = templates_of_length(1);
      tmpl_ = 0;
      fresh_template_ = true;
    } else if (fresh_template_) {
      // choice_ already zeroed for this template.
    } else {
      // Odometer step, rightmost slot fastest.
      const std::string& t = templates_[tmpl_];
      int i = len_ - 1;
      for (; i >= 0; --i) {
        const int arity = t[i] - '0';
        const int limit = arity == 0   ? g_->vars()
                          : arity == 1 ? static_cast<int>(g_->unary.size())
                                       : static_cast<int>(g_->binary.size());
        if (++choice_[i] < limit) break;
        choice_[i] = 0;
      }
      if (i < 0) {
        // Template exhausted; advance template, then length.
        ++tmpl_;
        fresh_template_ = true;
        if (tmpl_ >= templates_.size()) {
          if (len_ >= max_len_) return false;
          ++len_;
          templates_ = templates_of_length(len_);
          tmpl_ = 0;
        }
        if (templates_.empty()) continue;  // defensive; lengths >= 1 have some
      }
    }
    if (fresh_template_) {
      if (tmpl_ >= templates_.size()) {
        if (len_ >= max_len_) return false;
        ++len_;
        templates_ = templates_of_length(len_);
        tmpl_ = 0;
        continue;
      }
      choice_.fill(0);
      fresh_template_ = false;
    }
    ++index_;
    return load_template();
  }
}

}  // namespace conserva
