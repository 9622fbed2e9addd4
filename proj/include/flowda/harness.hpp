#pragma once

// Experiment protocols: single-step, noisy-observation sweep and cycling.

#include <bit>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flowda/baselines.hpp"
#include "flowda/config.hpp"
#include "flowda/dynamics.hpp"
#include "flowda/flow.hpp"
#include "flowda/io.hpp"
#include "flowda/observations.hpp"

namespace flowda {

struct AssimilationRequest {
  const GridState& background;
  const ObservationSet& obs;
  std::size_t time_index;
  double sigma_noise;
};

using Assimilator = std::function<GridState(const AssimilationRequest&)>;

inline Assimilator identity_assimilator() {
  return [](const AssimilationRequest& r) { return r.background; };
}

template <class Real>
Assimilator flowda_assimilator(std::shared_ptr<const VelocityModel<Real>> model, FlowConfig flow) {
  return [model, flow](const AssimilationRequest& r) { return euler_assimilate(*model, r.background, r.obs, flow); };
}

inline Assimilator interp_assimilator(double ell, int k) {
  return [ell, k](const AssimilationRequest& r) { return interp_blend(r.background, r.obs, ell, k); };
}

/// With `auto_sigma_o`, sigma_o follows the observation-noise level (0.01 floor).
inline Assimilator oi_assimilator(OIConfig cfg, VariableStats stats, bool auto_sigma_o) {
  return [cfg, stats, auto_sigma_o](const AssimilationRequest& r) {
    OIConfig c = cfg;
    if (auto_sigma_o) c.sigma_o = std::max(r.sigma_noise, 0.01);
    return optimal_interpolation(r.background, r.obs, c, stats);
  };
}

/// `count` distinct indices evenly spaced over [first, last].
inline std::vector<std::size_t> evaluation_times(std::size_t first, std::size_t last, int count) {
  if (last < first) throw DataError("held-out trajectory too short for the evaluation lead");
  const std::size_t span = last - first;
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(count), span + 1);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(first + (n == 1 ? 0 : i * span / (n - 1)));
  return out;
}

namespace detail {

inline std::uint64_t bits(double x) { return std::bit_cast<std::uint64_t>(x); }

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

inline void push_records(std::vector<Record>& out, const Record& proto, const GridState& truth, const GridState& x_b,
                         const GridState& x_a, const GridState* freerun) {
  const auto rb = rmse_per_variable(x_b, truth);
  const auto ra = rmse_per_variable(x_a, truth);
  std::vector<double> rf;
  if (freerun) rf = rmse_per_variable(*freerun, truth);
  for (int v = 0; v < truth.V(); ++v) {
    Record r = proto;
    r.variable = truth.variable_names()[static_cast<std::size_t>(v)];
    r.rmse_background = rb[static_cast<std::size_t>(v)];
    r.rmse_analysis = ra[static_cast<std::size_t>(v)];
    if (freerun) r.rmse_freerun = rf[static_cast<std::size_t>(v)];
    out.push_back(std::move(r));
  }
}

}  // namespace detail

/// Single-step analyses of lead-`eval.lead` backgrounds for every
/// (time, alpha, sigma). Seeds do not depend on sigma, so the sigma = 0 rows
/// are identical to a plain single-step run.
inline std::vector<Record> run_assimilation_grid(const ExperimentConfig& cfg, const Trajectory& test,
                                                 const VariableStats& stats, const Assimilator& assim,
                                                 const std::vector<double>& sigmas, const std::string& experiment) {
  cfg.validate();
  const auto& ev = cfg.eval;
  if (test.size() <= static_cast<std::size_t>(ev.lead)) throw DataError("held-out trajectory too short for the lead");
  const auto times = evaluation_times(static_cast<std::size_t>(ev.lead), test.size() - 1, ev.times);
  std::vector<Record> out;
  for (std::size_t t : times) {
    const GridState x_b = make_background(test, t, ev.lead, ev.sigma_ic, stats, derive_seed(cfg.seed, Stream::background, {t}));
    for (double alpha : ev.alphas) {
      const ObservationSet clean =
          sample_observations(test[t], alpha, std::nullopt, derive_seed(cfg.seed, Stream::locations, {t, detail::bits(alpha)}));
      for (double sigma : sigmas) {
        const ObservationSet obs = perturb_observations(
            clean, sigma, stats, derive_seed(cfg.seed, Stream::obs_noise, {t, detail::bits(alpha), detail::bits(sigma)}));
        const auto t0 = std::chrono::steady_clock::now();
        const GridState x_a = assim({x_b, obs, t, sigma});
        const double ms = ev.record_wall_time ? detail::elapsed_ms(t0) : 0.0;
        Record proto;
        proto.experiment = experiment;
        proto.alpha = alpha;
        proto.sigma_noise = sigma;
        proto.location_mode = "fresh";
        proto.cycle = 0;
        proto.time_index = static_cast<long>(t);
        proto.wall_ms = ms;
        detail::push_records(out, proto, test[t], x_b, x_a, nullptr);
      }
    }
  }
  return out;
}

inline std::vector<Record> run_single_step(const ExperimentConfig& cfg, const Trajectory& test, const VariableStats& stats,
                                           const Assimilator& assim) {
  return run_assimilation_grid(cfg, test, stats, assim, {0.0}, "single-step");
}

inline std::vector<Record> run_noise_sweep(const ExperimentConfig& cfg, const Trajectory& test, const VariableStats& stats,
                                           const Assimilator& assim) {
  return run_assimilation_grid(cfg, test, stats, assim, cfg.eval.sigmas, "noise-sweep");
}

struct CyclingResult {
  std::vector<Record> records;
  std::vector<std::vector<ObsCoord>> locations;  ///< observation coordinates per cycle
  std::size_t start_time = 0;                     ///< truth index of cycle 0
  std::optional<int> aborted_cycle;
  std::string abort_reason;
  int freerun_observations_used = 0;  ///< observation sets consumed by the free-run reference
};

/// Free-run `free_run` intervals from a perturbed truth state to get the
/// cycle-0 background, then `n_cycles` of {assimilate, forecast one interval}
/// alongside an unassimilated free-run forecast from the same start.
/// `run_index` selects the start time and all random draws.
inline CyclingResult run_cycling(const ExperimentConfig& cfg, const Trajectory& test, const VariableStats& stats,
                                 const Assimilator& assim, LocationMode mode, std::uint64_t run_index = 0) {
  cfg.validate();
  const auto& ev = cfg.eval;
  const auto need = static_cast<std::size_t>(ev.free_run + ev.n_cycles);
  if (test.size() < need) throw DataError("held-out trajectory too short for free_run + n_cycles");
  const std::uint64_t seed = derive_seed(cfg.seed, {0x6379ULL, run_index});
  Rng pick(derive_seed(seed, Stream::start_time));
  const auto t0 = static_cast<std::size_t>(
      uniform_int(pick, ev.free_run, static_cast<std::int64_t>(test.size()) - ev.n_cycles));
  const DynamicsConfig fc = test.config.forecast_model();

  CyclingResult res;
  res.start_time = t0;
  GridState x_b = test[t0];
  GridState freerun = test[t0];
  std::optional<std::vector<ObsCoord>> fixed;
  const char* mode_name = to_string(mode);
  int c = 0;
  try {
    x_b = make_background(test, t0, ev.free_run, ev.sigma_ic, stats, derive_seed(seed, Stream::background));
    freerun = x_b;
    for (c = 0; c < ev.n_cycles; ++c) {
      const std::size_t t = t0 + static_cast<std::size_t>(c);
      const auto loc_seed = derive_seed(seed, Stream::locations, {mode == LocationMode::fixed ? 0u : static_cast<std::uint64_t>(c)});
      ObservationSet obs = sample_observations(test[t], ev.cycle_alpha, fixed, loc_seed);
      if (mode == LocationMode::fixed && !fixed) fixed = obs.coords;
      obs = perturb_observations(obs, ev.cycle_sigma, stats, derive_seed(seed, Stream::obs_noise, {static_cast<std::uint64_t>(c)}));
      res.locations.push_back(obs.coords);

      const auto w0 = std::chrono::steady_clock::now();
      const GridState x_a = assim({x_b, obs, t, ev.cycle_sigma});
      const double ms = ev.record_wall_time ? detail::elapsed_ms(w0) : 0.0;
      Record proto;
      proto.experiment = "cycle";
      proto.alpha = ev.cycle_alpha;
      proto.sigma_noise = ev.cycle_sigma;
      proto.location_mode = mode_name;
      proto.cycle = c;
      proto.time_index = static_cast<long>(t);
      proto.wall_ms = ms;
      detail::push_records(res.records, proto, test[t], x_b, x_a, &freerun);

      if (c + 1 < ev.n_cycles) {
        x_b = forecast(x_a, 1, fc);
        freerun = forecast(freerun, 1, fc);
      }
    }
  } catch (const NumericalError& e) {
    res.aborted_cycle = c;
    res.abort_reason = e.what();
  }
  return res;
}

/// Climatological per-variable statistics of a trajectory.
inline VariableStats trajectory_stats(const Trajectory& traj) {
  return VariableStats::from_states(std::span<const GridState>(traj.states));
}

}  // namespace flowda
