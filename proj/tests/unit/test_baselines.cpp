#include <gtest/gtest.h>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>

#include "flowda/baselines.hpp"

using namespace flowda;

namespace {

GridState wave(int W, double phase, double amp = 3.0) {
  std::vector<double> v(static_cast<std::size_t>(W));
  for (int j = 0; j < W; ++j) v[j] = amp * std::sin(0.45 * j + phase) + 1.0;
  return GridState({1, W, 1}, {"x"}, v);
}

double ring_corr(int a, int b, int W, double ell) {
  double d = std::abs(a - b) % W;
  d = std::min(d, W - d);
  return std::exp(-d * d / (2 * ell * ell));
}

const VariableStats kUnit({0.0}, {1.0});

}  // namespace

TEST(Baselines, NoObservationsIsIdentity) {
  const GridState xb = wave(20, 0.3);
  ObservationSet none;
  EXPECT_EQ(max_abs_diff(interp_blend(xb, none, 0.25, 9), xb), 0.0);
  EXPECT_EQ(max_abs_diff(optimal_interpolation(xb, none, OIConfig{}, kUnit), xb), 0.0);
}

TEST(Baselines, ZeroInnovationLeavesBackground) {
  const GridState xb = wave(30, 0.1);
  const auto obs = observe_at(xb, {{0, 2}, {0, 3}, {0, 17}, {0, 25}});
  EXPECT_LT(max_abs_diff(optimal_interpolation(xb, obs, OIConfig{}, kUnit), xb), 1e-12);
  const GridState flat = GridState::filled({1, 30, 1}, 4.0, {"x"});
  EXPECT_LT(max_abs_diff(interp_blend(flat, observe_at(flat, {{0, 5}, {0, 9}}), 1.0, 9), flat), 1e-14);
}

TEST(Baselines, DenseObservationsImproveBackground) {
  const GridState truth = wave(40, 0.0);
  const GridState xb = wave(40, 0.4);
  std::vector<ObsCoord> all;
  for (int j = 0; j < 40; ++j) all.push_back({0, static_cast<double>(j)});
  const auto obs = observe_at(truth, all);
  const double rb = rmse_per_variable(xb, truth)[0];
  EXPECT_LT(rmse_per_variable(interp_blend(xb, obs, 0.25, 9), truth)[0], 0.6 * rb);
  EXPECT_LT(rmse_per_variable(optimal_interpolation(xb, obs, OIConfig{}, VariableStats({0.0}, {3.0})), truth)[0], 0.1 * rb);
}

TEST(Baselines, SingleObservationClosedForm) {
  const int W = 24;
  const GridState xb = wave(W, 0.7);
  ObservationSet obs = observe_at(xb, {{0, 6}});
  obs.values[0] += 1.5;
  OIConfig cfg;
  cfg.ell_b = 2.5;
  cfg.sigma_b = 0.8;
  cfg.sigma_o = 0.3;
  const VariableStats st({0.0}, {2.0});
  const GridState xa = optimal_interpolation(xb, obs, cfg, st);
  const double b2 = std::pow(0.8 * 2.0, 2), r2 = std::pow(0.3 * 2.0, 2);
  for (int n = 0; n < W; ++n) {
    const double inc = b2 * ring_corr(n, 6, W, 2.5) / (b2 + r2) * 1.5;
    EXPECT_NEAR(xa[n] - xb[n], inc, 1e-9) << n;
  }
}

TEST(Baselines, CoincidentObservationsPool) {
  const GridState xb = wave(24, 0.2);
  ObservationSet two = observe_at(xb, {{0, 9}, {0, 9}});
  two.values = {xb[9] + 1.0, xb[9] + 2.0};
  ObservationSet one = observe_at(xb, {{0, 9}});
  one.values = {xb[9] + 1.5};
  OIConfig c2;
  c2.sigma_o = 0.4;
  OIConfig c1 = c2;
  c1.sigma_o = 0.4 / std::sqrt(2.0);
  EXPECT_LT(max_abs_diff(optimal_interpolation(xb, two, c2, kUnit), optimal_interpolation(xb, one, c1, kUnit)), 1e-8);
}

TEST(Baselines, IncrementLiesInCorrelationSpan) {
  const int W = 32;
  const double ell = 2.0;
  const GridState xb = wave(W, 0.0);
  const GridState truth = wave(W, 0.9);
  const std::vector<int> at{1, 4, 13, 20, 27};
  std::vector<ObsCoord> coords;
  for (int j : at) coords.push_back({0, static_cast<double>(j)});
  const GridState xa = optimal_interpolation(xb, observe_at(truth, coords), OIConfig{}, VariableStats({0.0}, {3.0}));
  Eigen::MatrixXd C(W, static_cast<Eigen::Index>(at.size()));
  Eigen::VectorXd inc(W);
  for (int n = 0; n < W; ++n) {
    inc(n) = xa[n] - xb[n];
    for (std::size_t m = 0; m < at.size(); ++m) C(n, static_cast<Eigen::Index>(m)) = ring_corr(n, at[m], W, ell);
  }
  const Eigen::VectorXd z = C.colPivHouseholderQr().solve(inc);
  EXPECT_LT((C * z - inc).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Baselines, OIBeatsBackgroundWhenCorrectlySpecified) {
  const int W = 40;
  OIConfig cfg;
  cfg.ell_b = 2.0;
  cfg.sigma_b = 1.0;
  cfg.sigma_o = 0.5;
  Eigen::MatrixXd B(W, W);
  for (int i = 0; i < W; ++i)
    for (int j = 0; j < W; ++j) B(i, j) = ring_corr(i, j, W, cfg.ell_b);
  B.diagonal().array() += 1e-9;
  const Eigen::MatrixXd Lb = B.llt().matrixL();
  Rng rng(42);
  NormalSampler normal;
  const GridState truth = wave(W, 0.0);
  double sb = 0.0, sa = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd xi(W);
    for (int i = 0; i < W; ++i) xi(i) = normal(rng);
    const Eigen::VectorXd e = Lb * xi;
    std::vector<double> v(W);
    for (int i = 0; i < W; ++i) v[i] = truth[i] + e(i);
    const GridState xb({1, W, 1}, {"x"}, v);
    auto obs = sample_observations(truth, 0.2, std::nullopt, rng());
    for (auto& y : obs.values) y += cfg.sigma_o * normal(rng);
    sb += std::pow(rmse_per_variable(xb, truth)[0], 2);
    sa += std::pow(rmse_per_variable(optimal_interpolation(xb, obs, cfg, kUnit), truth)[0], 2);
  }
  EXPECT_LE(sa, sb);
}

TEST(Baselines, DenseSolveGuard) {
  const GridState xb = GridState::filled({1, 6000, 1}, 0.0, {"x"});
  const auto obs = sample_observations(xb, 1.0, std::nullopt, 1);
  EXPECT_THROW(optimal_interpolation(xb, obs, OIConfig{}, kUnit), ConfigError);
}

TEST(Baselines, OIValidatesConfig) {
  OIConfig c;
  c.ell_b = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = OIConfig{};
  c.sigma_o = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
