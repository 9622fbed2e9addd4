#pragma once

// Lorenz-96 style toy dynamics: the ring (classic 1D L96) and a torus of L96
// rows coupled by diffusion across rows.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowda/error.hpp"
#include "flowda/grid.hpp"
#include "flowda/random.hpp"

namespace flowda {

enum class System { ring, torus };

inline const char* to_string(System s) { return s == System::ring ? "ring" : "torus"; }

inline System parse_system(const std::string& s) {
  if (s == "ring") return System::ring;
  if (s == "torus") return System::torus;
  throw ConfigError("unknown dynamics system '" + s + "' (expected ring|torus)");
}

struct DynamicsConfig {
  System system = System::ring;
  int H = 1;
  int W = 40;
  double F = 8.0;
  double c = 0.5;         ///< latitude coupling, torus only
  double dt = 0.01;       ///< RK4 step in model time units
  int substeps = 5;       ///< RK4 steps per DA interval (one interval ~ 6 h)
  double forcing_error = 0.0;  ///< forecasts run with F + forcing_error (imperfect-model mode)

  GridShape shape() const noexcept { return GridShape{H, W, 1}; }

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("dynamics.dt must be > 0");
    if (substeps < 1) throw ConfigError("dynamics.substeps must be >= 1");
    if (system == System::ring) {
      if (H != 1) throw ConfigError("dynamics: ring system requires H = 1");
      if (W < 4) throw ConfigError("dynamics: ring system requires W >= 4");
    } else {
      if (H < 3 || W < 4) throw ConfigError("dynamics: torus system requires H >= 3 and W >= 4");
    }
    if (!std::isfinite(F) || !std::isfinite(c) || !std::isfinite(forcing_error))
      throw ConfigError("dynamics: non-finite forcing or coupling");
  }

  /// The configuration the forecast model runs with.
  DynamicsConfig forecast_model() const {
    DynamicsConfig out = *this;
    out.F = F + forcing_error;
    out.forcing_error = 0.0;
    return out;
  }
};

struct Trajectory {
  std::vector<GridState> states;
  DynamicsConfig config;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return states.size(); }
  const GridState& operator[](std::size_t t) const { return states.at(t); }
};

namespace detail {

inline std::size_t wrap(int i, int n) { return static_cast<std::size_t>(((i % n) + n) % n); }

/// Raw tendency on a flat (h, w) array; V = 1.
inline void tendency_raw(std::span<const double> x, std::span<double> out, const DynamicsConfig& cfg) {
  const int H = cfg.H;
  const int W = cfg.W;
  for (int h = 0; h < H; ++h) {
    const double* row = x.data() + static_cast<std::size_t>(h) * W;
    double* o = out.data() + static_cast<std::size_t>(h) * W;
    for (int j = 0; j < W; ++j) {
      const double xp1 = row[wrap(j + 1, W)];
      const double xm1 = row[wrap(j - 1, W)];
      const double xm2 = row[wrap(j - 2, W)];
      o[j] = (xp1 - xm2) * xm1 - row[j] + cfg.F;
    }
  }
  if (cfg.system == System::torus) {
    for (int h = 0; h < H; ++h) {
      const double* up = x.data() + wrap(h + 1, H) * W;
      const double* dn = x.data() + wrap(h - 1, H) * W;
      const double* row = x.data() + static_cast<std::size_t>(h) * W;
      double* o = out.data() + static_cast<std::size_t>(h) * W;
      for (int j = 0; j < W; ++j) o[j] += cfg.c * (up[j] + dn[j] - 2.0 * row[j]);
    }
  }
}

/// One classical RK4 step in place. Scratch must hold 5 * n doubles.
inline void rk4_raw(std::vector<double>& x, const DynamicsConfig& cfg, std::vector<double>& scratch) {
  const std::size_t n = x.size();
  scratch.resize(5 * n);
  std::span<double> k1(scratch.data(), n), k2(scratch.data() + n, n), k3(scratch.data() + 2 * n, n),
      k4(scratch.data() + 3 * n, n), tmp(scratch.data() + 4 * n, n);
  const double dt = cfg.dt;
  tendency_raw(x, k1, cfg);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k1[i];
  tendency_raw(tmp, k2, cfg);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k2[i];
  tendency_raw(tmp, k3, cfg);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + dt * k3[i];
  tendency_raw(tmp, k4, cfg);
  for (std::size_t i = 0; i < n; ++i) x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

inline void require_dynamics_shape(const GridState& x, const DynamicsConfig& cfg, const char* where) {
  if (x.H() != cfg.H || x.W() != cfg.W || x.V() != 1)
    throw ShapeError(std::string(where) + ": state shape " + to_string(x.shape()) + " does not match dynamics " +
                     to_string(cfg.shape()));
}

inline bool all_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace detail

inline GridState tendency(const GridState& x, const DynamicsConfig& cfg) {
  cfg.validate();
  detail::require_dynamics_shape(x, cfg, "tendency");
  std::vector<double> out(x.size());
  detail::tendency_raw(x.values(), out, cfg);
  return x.with_values(std::move(out));
}

inline GridState rk4_step(const GridState& x, const DynamicsConfig& cfg) {
  cfg.validate();
  detail::require_dynamics_shape(x, cfg, "rk4_step");
  std::vector<double> v(x.values().begin(), x.values().end());
  std::vector<double> scratch;
  detail::rk4_raw(v, cfg, scratch);
  if (!detail::all_finite(v)) throw NumericalError("integration blowup at RK4 step 0");
  return x.with_values(std::move(v));
}

/// Advance `n_intervals` DA intervals and return only the terminal state.
inline GridState forecast(const GridState& x, int n_intervals, const DynamicsConfig& cfg) {
  cfg.validate();
  detail::require_dynamics_shape(x, cfg, "forecast");
  if (n_intervals < 0) throw ConfigError("forecast: n_intervals must be >= 0");
  std::vector<double> v(x.values().begin(), x.values().end());
  std::vector<double> scratch;
  const long total = static_cast<long>(n_intervals) * cfg.substeps;
  for (long s = 0; s < total; ++s) {
    detail::rk4_raw(v, cfg, scratch);
    if (!detail::all_finite(v)) throw NumericalError("integration blowup at RK4 step " + std::to_string(s));
  }
  return x.with_values(std::move(v));
}

/// States at every DA interval, starting with x itself; rollout(x, 0) = [x].
inline Trajectory rollout(const GridState& x, int n_intervals, const DynamicsConfig& cfg) {
  cfg.validate();
  detail::require_dynamics_shape(x, cfg, "rollout");
  if (n_intervals < 0) throw ConfigError("rollout: n_intervals must be >= 0");
  Trajectory traj;
  traj.config = cfg;
  traj.states.reserve(static_cast<std::size_t>(n_intervals) + 1);
  traj.states.push_back(x);
  std::vector<double> v(x.values().begin(), x.values().end());
  std::vector<double> scratch;
  long step = 0;
  for (int i = 0; i < n_intervals; ++i) {
    for (int s = 0; s < cfg.substeps; ++s, ++step) {
      detail::rk4_raw(v, cfg, scratch);
      if (!detail::all_finite(v)) throw NumericalError("integration blowup at RK4 step " + std::to_string(step));
    }
    traj.states.push_back(x.with_values(v));
  }
  return traj;
}

/// Seeded standard-normal initial state, spun up and then recorded for
/// `length` DA intervals.
inline Trajectory generate_dataset(const DynamicsConfig& cfg, int spinup_intervals, int length, std::uint64_t seed) {
  cfg.validate();
  if (length < 10) throw ConfigError("generate_dataset: length must be >= 10 to support triplet offsets");
  if (spinup_intervals < 0) throw ConfigError("generate_dataset: spinup_intervals must be >= 0");
  Rng rng(derive_seed(seed, Stream::initial_state));
  NormalSampler normal;
  std::vector<double> v(cfg.shape().size());
  for (auto& x : v) x = normal(rng);
  GridState x0(cfg.shape(), {"x"}, std::move(v));
  GridState start;
  try {
    start = forecast(x0, spinup_intervals, cfg);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("spin-up: ") + e.what());
  }
  Trajectory traj = rollout(start, length - 1, cfg);
  traj.seed = seed;
  return traj;
}

/// Background valid at traj[t]: forecast `lead` intervals from traj[t - lead]
/// perturbed by Gaussian noise of std sigma_ic * climatological std.
inline GridState make_background(const Trajectory& traj, std::size_t t, int lead, double sigma_ic,
                                 const VariableStats& stats, std::uint64_t seed) {
  if (lead < 0) throw ConfigError("make_background: lead must be >= 0");
  if (t >= traj.size() || t < static_cast<std::size_t>(lead))
    throw DataError("make_background: index t=" + std::to_string(t) + " with lead " + std::to_string(lead) +
                    " out of range for trajectory of length " + std::to_string(traj.size()));
  if (sigma_ic < 0.0) throw ConfigError("make_background: sigma_ic must be >= 0");
  const GridState& start = traj[t - static_cast<std::size_t>(lead)];
  require_stats(start, stats, "make_background");
  if (lead == 0 && sigma_ic == 0.0) return start;
  GridState init = start;
  if (sigma_ic > 0.0) {
    Rng rng(seed);
    NormalSampler normal;
    std::vector<double> v(start.values().begin(), start.values().end());
    const int V = start.V();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += sigma_ic * stats.std(i % V) * normal(rng);
    init = start.with_values(std::move(v));
  }
  return forecast(init, lead, traj.config.forecast_model());
}

}  // namespace flowda
