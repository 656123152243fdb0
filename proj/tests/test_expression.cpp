#include "support.hpp"

#include <gtest/gtest.h>

using namespace quifs;

namespace {
double eval(const std::string& text, std::initializer_list<double> x = {}, std::initializer_list<double> u = {}) {
  const std::vector<double> xs(x), us(u);
  return Expression(text, static_cast<int>(xs.size()), static_cast<int>(us.size()))(xs.data(), us.data());
}
}  // namespace

TEST(Expression, Precedence) {
  EXPECT_EQ(eval("1 + 2*3"), 7.0);
  EXPECT_EQ(eval("(1 + 2)*3"), 9.0);
  EXPECT_EQ(eval("2^3^2"), 512.0);
  EXPECT_EQ(eval("-2^2"), -4.0);
  EXPECT_EQ(eval("2^-1"), 0.5);
  EXPECT_EQ(eval("8/4/2"), 1.0);
  EXPECT_EQ(eval("1 - 2 - 3"), -4.0);
  EXPECT_EQ(eval("+3 * -x1", {2.0}), -6.0);
}

TEST(Expression, VariablesAndFunctions) {
  EXPECT_DOUBLE_EQ(eval("u1 - 0.6*x2 - x1^3 - x1", {1.5, -0.5}, {0.25}), 0.25 + 0.3 - 3.375 - 1.5);
  EXPECT_DOUBLE_EQ(eval("x2 + (0.5 + 0.5*x1)*u1", {0.2, -0.4}, {0.7}), -0.4 + 0.6 * 0.7);
  EXPECT_DOUBLE_EQ(eval("sin(pi/2) + cos(0) + exp(0) + log(1) + sqrt(4) + tanh(0) + abs(-3) + tan(0)"), 8.0);
  EXPECT_DOUBLE_EQ(eval("1e-3 * 2.5E2"), 0.25);
  EXPECT_EQ(eval("x1^3", {-1.1}), -1.1 * -1.1 * -1.1);
}

TEST(Expression, ErrorsCarryColumn) {
  auto message = [](const std::string& text) {
    try {
      Expression e(text, 2, 1);
    } catch (const InputError& err) {
      return std::string(err.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("x3").find("out of range"), std::string::npos);
  EXPECT_NE(message("u2").find("out of range"), std::string::npos);
  EXPECT_NE(message("x1 + y").find("column 6"), std::string::npos);
  EXPECT_NE(message("(x1 + 1").find("missing ')'"), std::string::npos);
  EXPECT_NE(message("x1 +").find("end of expression"), std::string::npos);
  EXPECT_NE(message("x1 x2").find("unexpected 'x'"), std::string::npos);
  EXPECT_NE(message("sin x1").find("expected '('"), std::string::npos);
  EXPECT_EQ(message("x1*u1"), "no error");
}
