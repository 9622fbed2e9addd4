#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flowda/error.hpp"
#include "flowda/grid.hpp"
#include "flowda/random.hpp"

namespace flowda {

struct ObsCoord {
  double h = 0.0;
  double w = 0.0;
  bool operator==(const ObsCoord&) const = default;
};

/// Scattered point observations of all V variables.
struct ObservationSet {
  int V = 1;
  std::vector<ObsCoord> coords;
  std::vector<double> values;       ///< M x V, row-major
  std::vector<double> local_rates;  ///< empty until local rates are computed

  std::size_t size() const noexcept { return coords.size(); }
  double value(std::size_t m, int v) const noexcept { return values[m * static_cast<std::size_t>(V) + static_cast<std::size_t>(v)]; }
  bool has_local_rates() const noexcept { return local_rates.size() == coords.size(); }

  void validate(int H, int W) const {
    if (V < 1) throw ShapeError("ObservationSet: V must be >= 1");
    if (values.size() != coords.size() * static_cast<std::size_t>(V))
      throw ShapeError("ObservationSet: values size does not match M x V");
    for (std::size_t m = 0; m < coords.size(); ++m) {
      const auto& c = coords[m];
      if (!(c.h >= 0.0 && c.h < H && c.w >= 0.0 && c.w < W))
        throw DataError("ObservationSet: observation " + std::to_string(m) + " at (" + std::to_string(c.h) + ", " +
                        std::to_string(c.w) + ") lies outside the " + std::to_string(H) + "x" + std::to_string(W) +
                        " domain");
    }
    for (double x : values)
      if (!std::isfinite(x)) throw NumericalError("ObservationSet: non-finite observation value");
    if (!local_rates.empty()) {
      if (local_rates.size() != coords.size()) throw ShapeError("ObservationSet: local_rates size mismatch");
      for (double a : local_rates)
        if (!(a > 0.0 && a <= 1.0)) throw DataError("ObservationSet: local rate outside (0, 1]");
    }
  }
};

/// Number of observations produced for rate alpha on an H x W grid.
inline int observation_count(double alpha, int H, int W) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("observation rate must lie in (0, 1], got " + std::to_string(alpha));
  return static_cast<int>(std::lround(alpha * H * W));
}

/// M distinct integer grid locations, uniform without replacement.
inline std::vector<ObsCoord> sample_locations(int H, int W, int M, std::uint64_t seed) {
  const int N = H * W;
  if (M < 1) throw ConfigError("observation rate yields M = 0 observations");
  if (M > N) throw ConfigError("requested " + std::to_string(M) + " observations on " + std::to_string(N) + " grid points");
  std::vector<int> idx(N);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // partial Fisher-Yates
  for (int i = 0; i < M; ++i) {
    const auto j = static_cast<int>(uniform_int(rng, i, N - 1));
    std::swap(idx[i], idx[j]);
  }
  std::vector<ObsCoord> out(M);
  for (int i = 0; i < M; ++i) out[i] = ObsCoord{static_cast<double>(idx[i] / W), static_cast<double>(idx[i] % W)};
  return out;
}

/// Read the truth at the given integer-grid locations.
inline ObservationSet observe_at(const GridState& truth, std::vector<ObsCoord> coords) {
  ObservationSet obs;
  obs.V = truth.V();
  obs.values.reserve(coords.size() * static_cast<std::size_t>(obs.V));
  for (const auto& c : coords) {
    const int h = static_cast<int>(c.h);
    const int w = static_cast<int>(c.w);
    if (h != c.h || w != c.w || h < 0 || h >= truth.H() || w < 0 || w >= truth.W())
      throw DataError("observe_at: location must be an integer grid point inside the domain");
    for (int v = 0; v < obs.V; ++v) obs.values.push_back(truth.at(h, w, v));
  }
  obs.coords = std::move(coords);
  return obs;
}

/// Synthetic observations at rate alpha. With `reuse`, the given location list
/// is used instead of drawing fresh locations (fixed-location protocol).
inline ObservationSet sample_observations(const GridState& truth, double alpha,
                                          const std::optional<std::vector<ObsCoord>>& reuse, std::uint64_t seed) {
  const int M = observation_count(alpha, truth.H(), truth.W());
  if (reuse) {
    if (reuse->size() != static_cast<std::size_t>(M) && M >= 1)
      throw ConfigError("sample_observations: reused location list has " + std::to_string(reuse->size()) +
                        " entries, rate requires " + std::to_string(M));
    return observe_at(truth, *reuse);
  }
  return observe_at(truth, sample_locations(truth.H(), truth.W(), M, seed));
}

/// Adds N(0, sigma_rel * std_v) to every observed value.
inline ObservationSet perturb_observations(const ObservationSet& obs, double sigma_rel, const VariableStats& stats,
                                           std::uint64_t seed) {
  if (!(sigma_rel >= 0.0)) throw ConfigError("perturb_observations: noise level must be >= 0");
  if (stats.size() != static_cast<std::size_t>(obs.V)) throw ShapeError("perturb_observations: stats/V mismatch");
  if (sigma_rel == 0.0) return obs;
  ObservationSet out = obs;
  Rng rng(seed);
  NormalSampler normal;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] += sigma_rel * stats.std(i % static_cast<std::size_t>(obs.V)) * normal(rng);
    if (!std::isfinite(out.values[i])) throw NumericalError("perturb_observations: non-finite perturbed value");
  }
  return out;
}

/// Signed offset `to - from` wrapped onto the periodic interval (-n/2, n/2].
inline double wrap_offset(double to, double from, int n) {
  double d = std::fmod(to - from, static_cast<double>(n));
  const double half = 0.5 * n;
  if (d > half) d -= n;
  if (d <= -half) d += n;
  return d;
}

inline void validate_window(int k, int H, int W) {
  if (k < 1 || k % 2 == 0) throw ConfigError("neighbor window k must be odd and >= 1, got " + std::to_string(k));
  const int limit = H == 1 ? 2 * W - 1 : std::min(2 * H - 1, 2 * W - 1);
  if (k > limit) throw ConfigError("neighbor window k=" + std::to_string(k) + " exceeds the domain limit " + std::to_string(limit));
}

/// alpha_m = M_k / (k k): the fraction of the k x k toroidal window around
/// each observation that is observed (M_k counts the observation itself).
/// A single-row domain uses a 1 x k window. A window wider than the grid
/// covers each grid line once, so its cell count is capped at the grid size.
inline std::vector<double> local_rate(const ObservationSet& obs, int k, int H, int W) {
  validate_window(k, H, W);
  const double r = 0.5 * (k - 1);
  const std::size_t M = obs.size();
  std::vector<double> rates(M);
  const double cells = static_cast<double>(H == 1 ? 1 : std::min(k, H)) * std::min(k, W);
  for (std::size_t m = 0; m < M; ++m) {
    int count = 0;
    for (std::size_t j = 0; j < M; ++j) {
      const bool in_h = H == 1 || std::abs(wrap_offset(obs.coords[j].h, obs.coords[m].h, H)) <= r;
      const bool in_w = std::abs(wrap_offset(obs.coords[j].w, obs.coords[m].w, W)) <= r;
      if (in_h && in_w) ++count;
    }
    rates[m] = std::min(1.0, count / cells);
  }
  return rates;
}

inline ObservationSet with_local_rates(ObservationSet obs, int k, int H, int W) {
  obs.local_rates = local_rate(obs, k, H, W);
  return obs;
}

// CSV: header h,w,v0,...,v{V-1}; one row per observation.

inline void write_observations_csv(const ObservationSet& obs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "h,w";
  for (int v = 0; v < obs.V; ++v) out << ",v" << v;
  out << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t m = 0; m < obs.size(); ++m) {
    out << obs.coords[m].h << ',' << obs.coords[m].w;
    for (int v = 0; v < obs.V; ++v) out << ',' << obs.value(m, v);
    out << '\n';
  }
  if (!out) throw DataError("write failed for '" + path + "'");
}

inline ObservationSet read_observations_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open observation file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty observation file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 3 || header[0] != "h" || header[1] != "w")
    throw FormatError(path + ": header must be h,w,v0,...");
  ObservationSet obs;
  obs.V = static_cast<int>(header.size()) - 2;
  for (int v = 0; v < obs.V; ++v)
    if (header[2 + v] != "v" + std::to_string(v)) throw FormatError(path + ": unexpected column '" + header[2 + v] + "'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError(path + ":" + std::to_string(lineno) + ": cannot parse '" + cell + "'");
      }
    }
    if (row.size() != header.size()) throw FormatError(path + ":" + std::to_string(lineno) + ": wrong column count");
    obs.coords.push_back({row[0], row[1]});
    obs.values.insert(obs.values.end(), row.begin() + 2, row.end());
  }
  return obs;
}

}  // namespace flowda
