#pragma once

// Stage I: single-step assimilation of lead-`lead` backgrounds.
// Stage II: warm-started cycling fine-tuning over short forecast/analysis
// rollouts, with gradients truncated at every cycle boundary.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <string>
#include <vector>

#include "flowda/dynamics.hpp"
#include "flowda/error.hpp"
#include "flowda/flow.hpp"
#include "flowda/observations.hpp"
#include "flowda/optim.hpp"
#include "flowda/random.hpp"

namespace flowda {

struct TrainConfig {
  double lr = 3e-4;
  double stage2_lr = 3e-5;  ///< Stage-II fine-tuning rate (fresh optimizer state)
  long stage1_iterations = 20000;
  long stage2_iterations = 1700;
  int batch_size = 8;
  double alpha_min = 0.02;
  double alpha_max = 0.4;
  int lead = 8;
  int rollout_max = 8;
  int stage2_rollouts = 8;        ///< independent rollouts per Stage-II iteration
  double sigma_ic = 0.05;         ///< background IC perturbation, in climatological std
  double sigma_noise_max = 0.0;   ///< observation noise during training, drawn U[0, max] per sample
  double source_noise = 0.0;      ///< optional noise on X_0 during training (0 = deterministic background)
  double weight_decay = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (!(stage2_lr > 0.0)) throw ConfigError("train.stage2_lr must be > 0");
    if (!(alpha_min > 0.0 && alpha_min <= alpha_max && alpha_max <= 1.0))
      throw ConfigError("train: rate range must satisfy 0 < alpha_min <= alpha_max <= 1");
    if (lead < 1) throw ConfigError("train.lead must be >= 1");
    if (rollout_max < 1) throw ConfigError("train.rollout_max must be >= 1");
    if (stage2_rollouts < 1) throw ConfigError("train.stage2_rollouts must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (stage1_iterations < 0 || stage2_iterations < 0) throw ConfigError("train: iteration counts must be >= 0");
    if (sigma_ic < 0.0 || sigma_noise_max < 0.0 || source_noise < 0.0 || weight_decay < 0.0)
      throw ConfigError("train: noise levels and weight decay must be >= 0");
  }

  AdamConfig adam(int stage = 1) const {
    AdamConfig a;
    a.lr = stage == 2 ? stage2_lr : lr;
    a.weight_decay = weight_decay;
    return a;
  }
};

struct IterationRecord {
  long iteration = 0;
  int stage = 1;
  double loss = 0.0;
  double alpha = 0.0;  ///< mean observation rate of the iteration's samples
  int T = 1;           ///< rollout length (1 in Stage I)
};

/// Append-only CSV `iteration,stage,loss,alpha,T`, flushed every row.
class TrainingLog {
public:
  TrainingLog() = default;
  explicit TrainingLog(const std::string& path, bool append = false)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw DataError("cannot open training log '" + path + "'");
    if (!append || out_.tellp() == 0) out_ << "iteration,stage,loss,alpha,T\n";
    out_ << std::setprecision(std::numeric_limits<double>::max_digits10);
    out_.flush();
  }

  void write(const IterationRecord& r) {
    if (!out_.is_open()) return;
    out_ << r.iteration << ',' << r.stage << ',' << r.loss << ',' << r.alpha << ',' << r.T << '\n';
    out_.flush();
  }

private:
  std::ofstream out_;
};

/// alpha drawn log-uniformly over [alpha_min, alpha_max].
inline double draw_rate(const TrainConfig& cfg, Rng& rng) {
  const double u = uniform01(rng);
  return std::exp(std::log(cfg.alpha_min) + u * (std::log(cfg.alpha_max) - std::log(cfg.alpha_min)));
}

/// Synthetic training observations of `truth`, with optional noise.
inline ObservationSet draw_training_obs(const GridState& truth, double alpha, const TrainConfig& cfg,
                                        const VariableStats& stats, Rng& rng) {
  const int M = std::max(1, observation_count(alpha, truth.H(), truth.W()));
  ObservationSet obs = observe_at(truth, sample_locations(truth.H(), truth.W(), M, rng()));
  if (cfg.sigma_noise_max > 0.0) obs = perturb_observations(obs, cfg.sigma_noise_max * uniform01(rng), stats, rng());
  return obs;
}

template <class Real>
GridState maybe_source_noise(const GridState& x_b, const TrainConfig& cfg, const VariableStats& stats, Rng& rng) {
  if (cfg.source_noise == 0.0) return x_b;
  NormalSampler normal;
  std::vector<double> v(x_b.values().begin(), x_b.values().end());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += cfg.source_noise * stats.std(i % x_b.V()) * normal(rng);
  return x_b.with_values(std::move(v));
}

/// One Stage-I iteration: batch of (lead-`lead` background, truth, fresh
/// observations, tau ~ U[0, 1)) samples, one AdamW step.
template <class Real>
IterationRecord stage1_iteration(VelocityModel<Real>& model, AdamState& opt, const Trajectory& traj, const TrainConfig& cfg,
                                 long iteration) {
  cfg.validate();
  if (traj.size() <= static_cast<std::size_t>(cfg.lead))
    throw DataError("stage1: trajectory of length " + std::to_string(traj.size()) + " is too short for lead " +
                    std::to_string(cfg.lead));
  Rng rng(derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(iteration)}));
  const VariableStats& stats = model.stats();
  std::vector<TrainSample> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  double alpha_sum = 0.0;
  for (int b = 0; b < cfg.batch_size; ++b) {
    const auto t = static_cast<std::size_t>(uniform_int(rng, cfg.lead, static_cast<std::int64_t>(traj.size()) - 1));
    GridState x_b = make_background(traj, t, cfg.lead, cfg.sigma_ic, stats, rng());
    x_b = maybe_source_noise<Real>(x_b, cfg, stats, rng);
    const double alpha = draw_rate(cfg, rng);
    alpha_sum += alpha;
    ObservationSet obs = draw_training_obs(traj[t], alpha, cfg, stats, rng);
    const double tau = uniform01(rng);
    batch.push_back(make_train_sample(model, std::move(x_b), traj[t], std::move(obs), tau));
  }
  const auto g = grad(model, std::span<const TrainSample>(batch));
  optimizer_step(model.mutable_parameters(), std::span<const double>(g.gradient), opt, cfg.adam());
  return IterationRecord{iteration, 1, g.loss, alpha_sum / cfg.batch_size, 1};
}

/// One Stage-II iteration: T ~ U{1..rollout_max} forecast/assimilate cycles
/// starting from a lead-`lead` background; the CFM loss of every cycle's
/// (background, truth) pair enters one AdamW step.
template <class Real>
IterationRecord stage2_iteration(VelocityModel<Real>& model, AdamState& opt, const Trajectory& traj, const TrainConfig& cfg,
                                 const FlowConfig& flow, long iteration) {
  cfg.validate();
  if (model.trained_stages() < 1) throw ConfigError("stage2 requires a Stage-I checkpoint (model has not completed Stage I)");
  const auto need = static_cast<std::size_t>(cfg.lead + cfg.rollout_max + 1);
  if (traj.size() < need) throw DataError("stage2: trajectory too short for lead + rollout_max");
  Rng rng(derive_seed(cfg.seed, {2, static_cast<std::uint64_t>(iteration)}));
  const VariableStats& stats = model.stats();
  const DynamicsConfig fc = traj.config.forecast_model();
  std::vector<TrainSample> batch;
  double alpha_sum = 0.0;
  int T_first = 0;
  for (int r = 0; r < cfg.stage2_rollouts; ++r) {
    const auto t0 = static_cast<std::size_t>(
        uniform_int(rng, cfg.lead, static_cast<std::int64_t>(traj.size()) - 1 - cfg.rollout_max));
    const int T = static_cast<int>(uniform_int(rng, 1, cfg.rollout_max));
    if (r == 0) T_first = T;
    GridState state = make_background(traj, t0, cfg.lead, cfg.sigma_ic, stats, rng());
    for (int s = 1; s <= T; ++s) {
      const std::size_t t = t0 + static_cast<std::size_t>(s);
      GridState x_b = forecast(state, 1, fc);
      const double alpha = draw_rate(cfg, rng);
      alpha_sum += alpha;
      ObservationSet obs = model.prepare(draw_training_obs(traj[t], alpha, cfg, stats, rng));
      const double tau = uniform01(rng);
      if (s < T) state = euler_assimilate(model, x_b, obs, flow);
      batch.push_back(make_train_sample(model, maybe_source_noise<Real>(x_b, cfg, stats, rng), traj[t], std::move(obs), tau));
    }
  }
  const auto g = grad(model, std::span<const TrainSample>(batch));
  optimizer_step(model.mutable_parameters(), std::span<const double>(g.gradient), opt, cfg.adam(2));
  return IterationRecord{iteration, 2, g.loss, alpha_sum / static_cast<double>(batch.size()), T_first};
}

using ProgressFn = std::function<void(const IterationRecord&)>;

template <class Real>
void train_stage1(VelocityModel<Real>& model, const Trajectory& traj, const TrainConfig& cfg, TrainingLog* log = nullptr,
                  const ProgressFn& progress = {}) {
  AdamState opt(model.parameter_count());
  for (long it = 0; it < cfg.stage1_iterations; ++it) {
    const auto rec = stage1_iteration(model, opt, traj, cfg, it);
    if (log) log->write(rec);
    if (progress) progress(rec);
  }
  model.set_trained_stages(std::max(model.trained_stages(), 1));
}

template <class Real>
void train_stage2(VelocityModel<Real>& model, const Trajectory& traj, const TrainConfig& cfg, const FlowConfig& flow,
                  TrainingLog* log = nullptr, const ProgressFn& progress = {}) {
  if (model.trained_stages() < 1) throw ConfigError("stage2 requires a Stage-I checkpoint (model has not completed Stage I)");
  AdamState opt(model.parameter_count());
  for (long it = 0; it < cfg.stage2_iterations; ++it) {
    const auto rec = stage2_iteration(model, opt, traj, cfg, flow, it);
    if (log) log->write(rec);
    if (progress) progress(rec);
  }
  model.set_trained_stages(2);
}

}  // namespace flowda
