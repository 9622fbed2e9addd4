#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "flowda/train.hpp"

using namespace flowda;

namespace {

const Trajectory& data() {
  static const Trajectory traj = [] {
    DynamicsConfig c;
    return generate_dataset(c, 200, 400, 31);
  }();
  return traj;
}

VariableStats stats() { return VariableStats::from_states(std::span<const GridState>(data().states)); }

ModelArch small_arch() {
  ModelArch a;
  a.width = 16;
  a.depth = 2;
  a.conv_kernel = 5;
  a.tau_dim = 4;
  a.kernel_hidden = {8};
  return a;
}

VelocityModel<float> fresh(std::uint64_t seed) {
  return VelocityModel<float>::initialized(small_arch(), {1, 40, 1}, {"x"}, stats(), seed);
}

TrainConfig small_cfg(std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.batch_size = 4;
  return c;
}

}  // namespace

TEST(Train, IterationsAreDeterministic) {
  auto a = fresh(1), b = fresh(1);
  TrainConfig cfg = small_cfg(3);
  cfg.stage1_iterations = 5;
  train_stage1(a, data(), cfg);
  train_stage1(b, data(), cfg);
  for (std::size_t i = 0; i < a.parameter_count(); ++i) ASSERT_EQ(a.parameters()[i], b.parameters()[i]);
  EXPECT_EQ(a.trained_stages(), 1);
}

TEST(Train, ZeroIterationsLeaveParameters) {
  auto a = fresh(1);
  const std::vector<float> keep(a.parameters().begin(), a.parameters().end());
  TrainConfig cfg = small_cfg(3);
  cfg.stage1_iterations = 0;
  train_stage1(a, data(), cfg);
  EXPECT_TRUE(std::equal(keep.begin(), keep.end(), a.parameters().begin()));
  cfg.lr = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, LossDecreasesOverOneThousandIterations) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto m = fresh(seed);
    TrainConfig cfg = small_cfg(seed);
    cfg.stage1_iterations = 1000;
    cfg.alpha_min = 0.5;
    cfg.alpha_max = 1.0;
    std::vector<double> losses;
    train_stage1(m, data(), cfg, nullptr, [&](const IterationRecord& r) { losses.push_back(r.loss); });
    ASSERT_EQ(losses.size(), 1000u);
    const double early = std::accumulate(losses.begin(), losses.begin() + 100, 0.0) / 100;
    const double late = std::accumulate(losses.end() - 100, losses.end(), 0.0) / 100;
    EXPECT_LT(late, early) << "seed " << seed;
  }
}

TEST(Train, DefaultConfigLossTrend) {
  const Trajectory train = generate_dataset(DynamicsConfig{}, 500, 20000, 101);
  const auto st = VariableStats::from_states(std::span<const GridState>(train.states));
  for (std::uint64_t seed : {7, 8, 9}) {
    auto m = VelocityModel<float>::initialized(ModelArch{}, {1, 40, 1}, {"x"}, st, seed);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.stage1_iterations = 1000;
    std::vector<double> losses;
    train_stage1(m, train, cfg, nullptr, [&](const IterationRecord& r) { losses.push_back(r.loss); });
    const double at100 = std::accumulate(losses.begin(), losses.begin() + 100, 0.0) / 100;
    const double at1000 = std::accumulate(losses.begin() + 900, losses.begin() + 1000, 0.0) / 100;
    EXPECT_LT(at1000, at100) << "seed " << seed;
  }
}

TEST(Train, StageTwoRequiresStageOne) {
  auto m = fresh(1);
  TrainConfig cfg = small_cfg(1);
  AdamState opt(m.parameter_count());
  EXPECT_THROW(stage2_iteration(m, opt, data(), cfg, FlowConfig{}, 0), ConfigError);
  EXPECT_THROW(train_stage2(m, data(), cfg, FlowConfig{}), ConfigError);
}

TEST(Train, RolloutLengthsAreBoundedAndReproducible) {
  auto run = [](int rollout_max) {
    auto m = fresh(1);
    m.set_trained_stages(1);
    TrainConfig cfg = small_cfg(4);
    cfg.rollout_max = rollout_max;
    AdamState opt(m.parameter_count());
    std::vector<int> Ts;
    for (long it = 0; it < 12; ++it) Ts.push_back(stage2_iteration(m, opt, data(), cfg, FlowConfig{4}, it).T);
    return Ts;
  };
  const auto a = run(8);
  EXPECT_EQ(a, run(8));
  std::set<int> distinct(a.begin(), a.end());
  EXPECT_GT(distinct.size(), 1u);
  for (int T : a) {
    EXPECT_GE(T, 1);
    EXPECT_LE(T, 8);
  }
  for (int T : run(1)) EXPECT_EQ(T, 1);
}

TEST(Train, StageTwoMarksCheckpoint) {
  auto m = fresh(1);
  m.set_trained_stages(1);
  TrainConfig cfg = small_cfg(5);
  cfg.stage2_iterations = 2;
  train_stage2(m, data(), cfg, FlowConfig{4});
  EXPECT_EQ(m.trained_stages(), 2);
}

TEST(Train, StageTwoStepUsesItsOwnRate) {
  auto m = fresh(1);
  m.set_trained_stages(1);
  TrainConfig cfg = small_cfg(6);
  cfg.stage2_rollouts = 2;
  cfg.stage2_lr = 1e-6;
  const std::vector<float> before(m.parameters().begin(), m.parameters().end());
  AdamState opt(m.parameter_count());
  stage2_iteration(m, opt, data(), cfg, FlowConfig{4}, 0);
  double moved = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i)
    moved = std::max(moved, std::abs(static_cast<double>(m.parameters()[i]) - before[i]));
  EXPECT_GT(moved, 0.0);
  EXPECT_LE(moved, 1e-6 * (1 + 1e-3) + 1e-7);
  cfg.stage2_lr = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, RatesFollowConfiguredRange) {
  TrainConfig cfg;
  cfg.alpha_min = 0.05;
  cfg.alpha_max = 0.2;
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double a = draw_rate(cfg, rng);
    EXPECT_GE(a, 0.05);
    EXPECT_LE(a, 0.2);
  }
}

TEST(Train, LogFormat) {
  const auto path = (std::filesystem::temp_directory_path() / "flowda_train_log.csv").string();
  {
    TrainingLog log(path);
    log.write({0, 1, 0.5, 0.1, 1});
    log.write({1, 1, 0.25, 0.2, 1});
  }
  {
    TrainingLog log(path, true);
    log.write({0, 2, 0.125, 0.3, 4});
  }
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "iteration,stage,loss,alpha,T");
  EXPECT_EQ(lines[1], "0,1,0.5,0.10000000000000001,1");
  EXPECT_EQ(lines[3], "0,2,0.125,0.29999999999999999,4");
  std::filesystem::remove(path);
}
