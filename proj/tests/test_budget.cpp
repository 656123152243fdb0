#include "support.hpp"

#include <gtest/gtest.h>

using namespace quifs;

namespace {
const GeneratingFunction& psi6() {
  static const GeneratingFunction g = makeKernel("laguerre-m3", 2);
  return g;
}
}  // namespace

TEST(Budget, SpacingFormula) {
  const ApproximationBudget b = selectBudget(0.05, psi6(), 8.0, 1.0);
  EXPECT_EQ(b.shape, 2.0);
  EXPECT_NEAR(b.h, 0.05 * 7.0 / (3.0 * 8.0 * std::sqrt(2.0)), 1e-12);
  EXPECT_NEAR(b.h, 0.0103, 0.00005);
  EXPECT_NEAR(selectBudget(0.005, psi6(), 2.0, 2.0).h, 0.004, 0.0005);
  EXPECT_NEAR(selectBudget(0.05, psi6(), 2.0, 2.0).h, 0.04, 0.005);
}

TEST(Budget, RadiusFormulaAndTerms) {
  const double eps = 0.05, sup = 2.0;
  const ApproximationBudget b = selectBudget(eps, psi6(), 2.0, sup);
  const double kd = psi6().decayExponent() - 2.0;
  const double r0 = std::sqrt(2.0) * std::pow(3.0 * psi6().truncationConstant() * sup / eps, 1.0 / kd);
  EXPECT_NEAR(b.r0, r0, 1e-7 * r0);
  EXPECT_LE(b.interpTerm, eps / 3.0);
  EXPECT_LE(b.saturationTerm, eps / 3.0);
  EXPECT_LE(b.truncationTerm, eps / 3.0);
  EXPECT_LE(certifiedBound(b), eps);
  EXPECT_TRUE(b.valid());
}

TEST(Budget, SpacingLinearInEpsilon) {
  for (double L0 : {0.5, 2.0, 8.0}) {
    const double h1 = selectBudget(0.01, psi6(), L0, 1.0).h;
    for (double k : {2.0, 3.0, 5.0}) {
      EXPECT_NEAR(selectBudget(0.01 * k, psi6(), L0, 1.0).h, k * h1, 1e-12 * k * h1);
    }
  }
}

TEST(Budget, ConstantPolicy) {
  EXPECT_THROW(selectBudget(0.05, psi6(), 0.0, 1.0), BudgetInfeasibleError);
  BudgetOptions opt;
  opt.maxSpacing = 0.1;
  const ApproximationBudget b = selectBudget(0.05, psi6(), 0.0, 1.0, opt);
  EXPECT_EQ(b.interpTerm, 0.0);
  EXPECT_EQ(b.h, 0.1);
  EXPECT_DOUBLE_EQ(b.certifiedBound(), b.saturationTerm + b.truncationTerm);
}

TEST(Budget, DoublingRadiusShrinksTruncation) {
  BudgetOptions opt;
  const ApproximationBudget base = selectBudget(0.05, psi6(), 2.0, 2.0);
  opt.radius = 2.0 * base.r0;
  const ApproximationBudget twice = selectBudget(0.05, psi6(), 2.0, 2.0, opt);
  EXPECT_NEAR(twice.truncationTerm, base.truncationTerm * std::pow(2.0, -(psi6().decayExponent() - 2.0)),
              1e-15);
  opt.radius = 0.5 * base.r0;
  EXPECT_THROW(selectBudget(0.05, psi6(), 2.0, 2.0, opt), BudgetInfeasibleError);
}

TEST(Budget, ShapeLadder) {
  BudgetOptions opt;
  opt.minShape = 1.0;
  // At D = 1 the saturation term is about 0.025 for supNorm 2, above eps/3; D = 1.5 is the first fit.
  EXPECT_EQ(selectBudget(0.05, psi6(), 2.0, 2.0, opt).shape, 1.5);
  EXPECT_EQ(selectBudget(0.05, psi6(), 2.0, 2.0).shape, 2.0);
  opt.ladder = {0.25};
  opt.minShape = 0.0;
  EXPECT_THROW(selectBudget(0.05, psi6(), 2.0, 2.0, opt), BudgetInfeasibleError);
  BudgetOptions fixed;
  fixed.shape = 4.0;
  EXPECT_EQ(selectBudget(0.05, psi6(), 2.0, 2.0, fixed).shape, 4.0);
}

TEST(Budget, InputErrors) {
  EXPECT_THROW(selectBudget(0.0, psi6(), 2.0, 1.0), InputError);
  EXPECT_THROW(selectBudget(0.05, psi6(), -1.0, 1.0), InputError);
  EXPECT_THROW(selectBudget(0.05, psi6(), 2.0, std::nan("")), InputError);
}

TEST(Budget, ViolationDetected) {
  ApproximationBudget b = selectBudget(0.05, psi6(), 2.0, 2.0);
  b.h *= 2.0;
  b.interpTerm = b.cGamma * b.L0 * b.h * std::sqrt(b.shape);
  EXPECT_FALSE(b.valid());
  EXPECT_NE(b.violation().find("interpolation"), std::string::npos);
}

TEST(Budget, RebudgetKeepsSpacing) {
  const ApproximationBudget b = selectBudget(0.05, psi6(), 2.0, 2.0);
  const ApproximationBudget c = rebudgetRadius(b, psi6(), 3.0);
  EXPECT_EQ(c.h, b.h);
  EXPECT_EQ(c.shape, b.shape);
  EXPECT_GT(c.r0, b.r0);
  EXPECT_TRUE(c.valid());
  EXPECT_EQ(rebudgetRadius(b, psi6(), 1.0).r0, b.r0);
}
