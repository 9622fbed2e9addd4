#include <gtest/gtest.h>

#include <cmath>

#include "flowda/optim.hpp"

using namespace flowda;

TEST(Adam, ThreeStepScalarOracle) {
  AdamConfig cfg;
  cfg.lr = 0.1;
  AdamState st(1);
  std::vector<double> theta{1.0};
  const double grads[] = {0.5, -0.2, 1.5};
  double p = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    optimizer_step(std::span<double>(theta), std::span<const double>(&g, 1), st, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    p -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(theta[0], p, 1e-12) << "step " << t;
  }
  EXPECT_EQ(st.step, 3);
}

TEST(Adam, FirstStepIsBoundedByLearningRate) {
  AdamConfig cfg;
  AdamState st(4);
  std::vector<double> theta{0, 0, 0, 0};
  const std::vector<double> g{1e-6, -3.0, 250.0, 0.0};
  optimizer_step(std::span<double>(theta), std::span<const double>(g), st, cfg);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_LE(std::abs(theta[i]), cfg.lr * (1 + 1e-12));
    EXPECT_EQ(std::signbit(theta[i]), g[i] > 0);
  }
  EXPECT_EQ(theta[3], 0.0);
}

TEST(Adam, ZeroGradientOrZeroRateLeavesParameters) {
  AdamConfig cfg;
  AdamState st(3);
  std::vector<double> theta{1.5, -2.0, 0.25};
  const auto keep = theta;
  const std::vector<double> zero(3, 0.0);
  for (int i = 0; i < 5; ++i) optimizer_step(std::span<double>(theta), std::span<const double>(zero), st, cfg);
  EXPECT_EQ(theta, keep);
  cfg.lr = 0.0;
  const std::vector<double> g{1.0, 2.0, 3.0};
  optimizer_step(std::span<double>(theta), std::span<const double>(g), st, cfg);
  EXPECT_EQ(theta, keep);
}

TEST(Adam, RejectsNonFiniteWithoutSideEffects) {
  AdamConfig cfg;
  AdamState st(2);
  std::vector<double> theta{1.0, 2.0};
  const std::vector<double> g{0.1, NAN};
  EXPECT_THROW(optimizer_step(std::span<double>(theta), std::span<const double>(g), st, cfg), NumericalError);
  EXPECT_EQ(st.step, 0);
  EXPECT_EQ(theta, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(st.m, (std::vector<double>{0.0, 0.0}));
  const std::vector<double> short_g{0.1};
  EXPECT_THROW(optimizer_step(std::span<double>(theta), std::span<const double>(short_g), st, cfg), ShapeError);
}

TEST(Adam, DecoupledWeightDecay) {
  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.5;
  AdamState st(1);
  std::vector<double> theta{2.0};
  const double g = 0.0;
  optimizer_step(std::span<double>(theta), std::span<const double>(&g, 1), st, cfg);
  EXPECT_NEAR(theta[0], 2.0 * (1 - 0.01 * 0.5), 1e-15);
}
