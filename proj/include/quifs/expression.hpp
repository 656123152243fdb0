#pragma once

#include "quifs/common.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace quifs {

/// Scalar expression in x1..xd and u1..um, compiled to postfix code.
/// Grammar: numbers, x<i>, u<i>, pi, + - * / ^ (right associative), unary minus, parentheses,
/// and the functions sin cos tan exp log sqrt tanh abs.
class Expression {
 public:
  Expression() = default;
  Expression(const std::string& text, int stateDim, int controlDim) { compile(text, stateDim, controlDim); }

  double operator()(const double* x, const double* u) const {
    double stack[64];
    int top = 0;
    for (const Op& op : code_) {
      switch (op.kind) {
        case Kind::Const: stack[top++] = op.value; break;
        case Kind::State: stack[top++] = x[op.index]; break;
        case Kind::Control: stack[top++] = u[op.index]; break;
        case Kind::Neg: stack[top - 1] = -stack[top - 1]; break;
        case Kind::Add: --top; stack[top - 1] += stack[top]; break;
        case Kind::Sub: --top; stack[top - 1] -= stack[top]; break;
        case Kind::Mul: --top; stack[top - 1] *= stack[top]; break;
        case Kind::Div: --top; stack[top - 1] /= stack[top]; break;
        case Kind::Pow: --top; stack[top - 1] = power(stack[top - 1], stack[top]); break;
        case Kind::Func: stack[top - 1] = apply(op.index, stack[top - 1]); break;
      }
    }
    return stack[0];
  }

  const std::string& text() const { return text_; }

 private:
  enum class Kind { Const, State, Control, Neg, Add, Sub, Mul, Div, Pow, Func };
  struct Op {
    Kind kind;
    double value = 0.0;
    int index = 0;
  };

  static constexpr const char* kFunctions[] = {"sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "abs"};

  static double apply(int f, double v) {
    switch (f) {
      case 0: return std::sin(v);
      case 1: return std::cos(v);
      case 2: return std::tan(v);
      case 3: return std::exp(v);
      case 4: return std::log(v);
      case 5: return std::sqrt(v);
      case 6: return std::tanh(v);
      default: return std::abs(v);
    }
  }

  static double power(double b, double e) {
    // Small integer exponents by repeated multiplication so that x^3 is exact for negative x.
    if (e == std::floor(e) && std::abs(e) <= 16) {
      const int n = static_cast<int>(std::abs(e));
      double r = 1.0;
      for (int i = 0; i < n; ++i) r *= b;
      return e < 0 ? 1.0 / r : r;
    }
    return std::pow(b, e);
  }

  // Recursive descent: expr := term (('+'|'-') term)*, term := unary (('*'|'/') unary)*,
  // unary := '-' unary | power, power := atom ('^' unary)?
  void compile(const std::string& text, int stateDim, int controlDim) {
    text_ = text;
    src_ = text_.c_str();
    pos_ = 0;
    stateDim_ = stateDim;
    controlDim_ = controlDim;
    code_.clear();
    depth_ = 0;
    maxDepth_ = 0;
    parseExpr();
    skipSpace();
    if (src_[pos_] != '\0') fail("unexpected '" + std::string(1, src_[pos_]) + "'");
    if (maxDepth_ > 60) fail("expression too deep");
    src_ = nullptr;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw InputError("expression '" + text_ + "' at column " + std::to_string(pos_ + 1) + ": " + what);
  }

  void skipSpace() {
    while (src_[pos_] == ' ' || src_[pos_] == '\t') ++pos_;
  }

  void emit(Op op) {
    code_.push_back(op);
    if (op.kind == Kind::Const || op.kind == Kind::State || op.kind == Kind::Control) {
      maxDepth_ = std::max(maxDepth_, ++depth_);
    } else if (op.kind != Kind::Neg && op.kind != Kind::Func) {
      --depth_;
    }
  }

  void parseExpr() {
    parseTerm();
    while (true) {
      skipSpace();
      const char c = src_[pos_];
      if (c != '+' && c != '-') return;
      ++pos_;
      parseTerm();
      emit({c == '+' ? Kind::Add : Kind::Sub});
    }
  }

  void parseTerm() {
    parseUnary();
    while (true) {
      skipSpace();
      const char c = src_[pos_];
      if (c != '*' && c != '/') return;
      ++pos_;
      parseUnary();
      emit({c == '*' ? Kind::Mul : Kind::Div});
    }
  }

  void parseUnary() {
    skipSpace();
    if (src_[pos_] == '-') {
      ++pos_;
      parseUnary();
      emit({Kind::Neg});
      return;
    }
    if (src_[pos_] == '+') {
      ++pos_;
      parseUnary();
      return;
    }
    parsePower();
  }

  void parsePower() {
    parseAtom();
    skipSpace();
    if (src_[pos_] == '^') {
      ++pos_;
      parseUnary();
      emit({Kind::Pow});
    }
  }

  void parseAtom() {
    skipSpace();
    const char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      parseExpr();
      skipSpace();
      if (src_[pos_] != ')') fail("missing ')'");
      ++pos_;
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      char* end = nullptr;
      const double v = std::strtod(src_ + pos_, &end);
      if (end == src_ + pos_) fail("bad number");
      pos_ = end - src_;
      emit({Kind::Const, v});
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      const size_t start = pos_;
      while (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_') ++pos_;
      const std::string word(src_ + start, src_ + pos_);
      if (word == "pi") {
        emit({Kind::Const, std::numbers::pi});
        return;
      }
      if ((word[0] == 'x' || word[0] == 'u') && word.size() > 1 &&
          word.find_first_not_of("0123456789", 1) == std::string::npos) {
        const int idx = std::stoi(word.substr(1)) - 1;
        const int limit = word[0] == 'x' ? stateDim_ : controlDim_;
        if (idx < 0 || idx >= limit) fail("variable '" + word + "' out of range");
        emit({word[0] == 'x' ? Kind::State : Kind::Control, 0.0, idx});
        return;
      }
      for (int f = 0; f < static_cast<int>(std::size(kFunctions)); ++f) {
        if (word != kFunctions[f]) continue;
        skipSpace();
        if (src_[pos_] != '(') fail("expected '(' after " + word);
        ++pos_;
        parseExpr();
        skipSpace();
        if (src_[pos_] != ')') fail("missing ')'");
        ++pos_;
        emit({Kind::Func, 0.0, f});
        return;
      }
      pos_ = start;
      fail("unknown identifier '" + word + "'");
    }
    if (c == '\0') fail("unexpected end of expression");
    fail("unexpected '" + std::string(1, c) + "'");
  }

  std::string text_;
  std::vector<Op> code_;
  const char* src_ = nullptr;
  size_t pos_ = 0;
  int stateDim_ = 0;
  int controlDim_ = 0;
  int depth_ = 0;
  int maxDepth_ = 0;
};

}  // namespace quifs
