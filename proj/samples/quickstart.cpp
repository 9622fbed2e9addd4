// Short end-to-end run on a small ring: generate data, train briefly,
// assimilate one background and compare against two baselines.

#include <iostream>
#include <memory>

#include "flowda/flowda.hpp"

int main() {
  using namespace flowda;

  DynamicsConfig dyn;  // ring, W = 40, F = 8
  const Trajectory train = generate_dataset(dyn, 200, 2000, 11);
  const Trajectory test = generate_dataset(dyn, 200, 200, 22);
  const VariableStats stats = VariableStats::from_states(train.states);

  ModelArch arch;
  arch.width = 32;
  arch.depth = 3;
  auto model = VelocityModel<float>::initialized(arch, train[0].shape(), train[0].variable_names(), stats, 3);

  TrainConfig tc;
  tc.stage1_iterations = 300;
  tc.lr = 1e-3;
  train_stage1(model, train, tc);

  const std::size_t t = 100;
  const GridState x_b = make_background(test, t, 8, 0.05, stats, 5);
  ObservationSet obs = sample_observations(test[t], 0.2, std::nullopt, 6);
  const FlowConfig flow;  // L = 32

  const GridState x_flow = euler_assimilate(model, x_b, model.prepare(obs), flow);
  const GridState x_interp = interp_blend(x_b, obs, AssimilatorConfig{}.interp_ell, arch.window_k);
  const GridState x_oi = optimal_interpolation(x_b, obs, OIConfig{}, stats);

  std::cout << "background RMSE " << rmse_per_variable(x_b, test[t])[0] << "\n"
            << "flow analysis   " << rmse_per_variable(x_flow, test[t])[0] << "\n"
            << "interp blend    " << rmse_per_variable(x_interp, test[t])[0] << "\n"
            << "OI              " << rmse_per_variable(x_oi, test[t])[0] << "\n";
}
