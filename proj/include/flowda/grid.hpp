#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowda/error.hpp"

namespace flowda {

struct GridShape {
  int H = 1;
  int W = 2;
  int V = 1;

  std::size_t points() const noexcept { return static_cast<std::size_t>(H) * static_cast<std::size_t>(W); }
  std::size_t size() const noexcept { return points() * static_cast<std::size_t>(V); }
  bool operator==(const GridShape&) const = default;
};

inline std::string to_string(const GridShape& s) {
  return std::to_string(s.H) + "x" + std::to_string(s.W) + "x" + std::to_string(s.V);
}

inline std::vector<std::string> default_variable_names(int V) {
  std::vector<std::string> names;
  for (int v = 0; v < V; ++v) names.push_back("x" + std::to_string(v));
  return names;
}

/// H x W x V field of finite doubles, row-major in (h, w, v).
///
/// Immutable once built: every operation returns a new state, so instances
/// may be shared freely between readers.
class GridState {
public:
  GridState() = default;

  GridState(GridShape shape, std::vector<std::string> names, std::vector<double> values)
      : shape_(shape), names_(std::move(names)), values_(std::move(values)) {
    validate();
  }

  /// Constant-valued state.
  static GridState filled(GridShape shape, double value, std::vector<std::string> names = {}) {
    if (names.empty()) names = default_variable_names(shape.V);
    return GridState(shape, std::move(names), std::vector<double>(shape.size(), value));
  }

  const GridShape& shape() const noexcept { return shape_; }
  int H() const noexcept { return shape_.H; }
  int W() const noexcept { return shape_.W; }
  int V() const noexcept { return shape_.V; }
  const std::vector<std::string>& variable_names() const noexcept { return names_; }
  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::size_t index(int h, int w, int v) const noexcept {
    return (static_cast<std::size_t>(h) * static_cast<std::size_t>(shape_.W) + static_cast<std::size_t>(w)) *
               static_cast<std::size_t>(shape_.V) +
           static_cast<std::size_t>(v);
  }
  double at(int h, int w, int v) const noexcept { return values_[index(h, w, v)]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  /// Same shape and names, new values.
  GridState with_values(std::vector<double> values) const { return GridState(shape_, names_, std::move(values)); }

  /// Move the storage out (for building a derived state without a copy).
  std::vector<double> release() && { return std::move(values_); }

  bool compatible(const GridState& other) const noexcept {
    return shape_ == other.shape_ && names_ == other.names_;
  }

private:
  void validate() const {
    if (shape_.H < 1) throw ShapeError("GridState: H must be >= 1, got " + std::to_string(shape_.H));
    if (shape_.W < 2) throw ShapeError("GridState: W must be >= 2, got " + std::to_string(shape_.W));
    if (shape_.V < 1) throw ShapeError("GridState: V must be >= 1, got " + std::to_string(shape_.V));
    if (names_.size() != static_cast<std::size_t>(shape_.V))
      throw ShapeError("GridState: " + std::to_string(names_.size()) + " variable names for V=" + std::to_string(shape_.V));
    if (values_.size() != shape_.size())
      throw ShapeError("GridState: " + std::to_string(values_.size()) + " values for shape " + to_string(shape_));
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (!std::isfinite(values_[i])) throw NumericalError("GridState: non-finite value at flat index " + std::to_string(i));
  }

  GridShape shape_{};
  std::vector<std::string> names_;
  std::vector<double> values_;
};

/// Throws ShapeError naming the first mismatched dimension.
inline void require_compatible(const GridState& a, const GridState& b, const char* where) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto fail = [&](const char* dim, int x, int y) {
    throw ShapeError(std::string(where) + ": dimension " + dim + " mismatch (" + std::to_string(x) + " vs " +
                     std::to_string(y) + ")");
  };
  if (sa.H != sb.H) fail("H", sa.H, sb.H);
  if (sa.W != sb.W) fail("W", sa.W, sb.W);
  if (sa.V != sb.V) fail("V", sa.V, sb.V);
  if (a.variable_names() != b.variable_names()) throw ShapeError(std::string(where) + ": variable names differ");
}

/// Per-variable climatological mean and standard deviation.
class VariableStats {
public:
  VariableStats() = default;
  VariableStats(std::vector<double> mean, std::vector<double> std) : mean_(std::move(mean)), std_(std::move(std)) {
    if (mean_.size() != std_.size()) throw ConfigError("VariableStats: mean/std length mismatch");
    if (mean_.empty()) throw ConfigError("VariableStats: no variables");
    for (std::size_t v = 0; v < std_.size(); ++v) {
      if (!(std_[v] > 0.0) || !std::isfinite(std_[v]))
        throw ConfigError("VariableStats: std must be > 0 for variable " + std::to_string(v));
      if (!std::isfinite(mean_[v])) throw ConfigError("VariableStats: non-finite mean for variable " + std::to_string(v));
    }
  }

  /// Pooled statistics over every grid point of every state.
  static VariableStats from_states(std::span<const GridState> states) {
    if (states.empty()) throw DataError("VariableStats: no states");
    const int V = states.front().V();
    std::vector<double> sum(V, 0.0), sumsq(V, 0.0);
    std::size_t count = 0;
    for (const auto& s : states) {
      require_compatible(states.front(), s, "VariableStats::from_states");
      const auto vals = s.values();
      for (std::size_t i = 0; i < vals.size(); ++i) sum[i % V] += vals[i];
      count += s.shape().points();
    }
    std::vector<double> mean(V), sd(V);
    for (int v = 0; v < V; ++v) mean[v] = sum[v] / static_cast<double>(count);
    for (const auto& s : states) {
      const auto vals = s.values();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double d = vals[i] - mean[i % V];
        sumsq[i % V] += d * d;
      }
    }
    for (int v = 0; v < V; ++v) sd[v] = std::sqrt(sumsq[v] / static_cast<double>(count));
    return VariableStats(std::move(mean), std::move(sd));
  }

  std::size_t size() const noexcept { return mean_.size(); }
  double mean(std::size_t v) const noexcept { return mean_[v]; }
  double std(std::size_t v) const noexcept { return std_[v]; }
  const std::vector<double>& means() const noexcept { return mean_; }
  const std::vector<double>& stds() const noexcept { return std_; }

private:
  std::vector<double> mean_;
  std::vector<double> std_;
};

inline std::vector<double> rmse_per_variable(const GridState& a, const GridState& b) {
  require_compatible(a, b, "rmse_per_variable");
  const int V = a.V();
  std::vector<double> acc(V, 0.0);
  const auto va = a.values();
  const auto vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = va[i] - vb[i];
    acc[i % V] += d * d;
  }
  const double n = static_cast<double>(a.shape().points());
  for (auto& x : acc) x = std::sqrt(x / n);
  return acc;
}

inline double max_abs_diff(const GridState& a, const GridState& b) {
  require_compatible(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline void require_stats(const GridState& x, const VariableStats& s, const char* where) {
  if (s.size() != static_cast<std::size_t>(x.V()))
    throw ShapeError(std::string(where) + ": dimension V mismatch (" + std::to_string(x.V()) + " vs stats " +
                     std::to_string(s.size()) + ")");
}

inline GridState normalize(const GridState& x, const VariableStats& s) {
  require_stats(x, s, "normalize");
  const int V = x.V();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x[i] - s.mean(i % V)) / s.std(i % V);
  return x.with_values(std::move(out));
}

inline GridState denormalize(const GridState& x, const VariableStats& s) {
  require_stats(x, s, "denormalize");
  const int V = x.V();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s.std(i % V) + s.mean(i % V);
  return x.with_values(std::move(out));
}

/// Straight-line path point (1 - tau) x0 + tau x1, tau in [0, 1].
inline GridState lerp_states(const GridState& x0, const GridState& x1, double tau) {
  require_compatible(x0, x1, "lerp_states");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("lerp_states: tau must lie in [0, 1], got " + std::to_string(tau));
  std::vector<double> out(x0.size());
  // x0 + tau (x1 - x0) keeps both endpoints exact.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = tau == 1.0 ? x1[i] : x0[i] + tau * (x1[i] - x0[i]);
  return x0.with_values(std::move(out));
}

inline GridState add(const GridState& a, const GridState& b) {
  require_compatible(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return a.with_values(std::move(out));
}

inline GridState subtract(const GridState& a, const GridState& b) {
  require_compatible(a, b, "subtract");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return a.with_values(std::move(out));
}

}  // namespace flowda
