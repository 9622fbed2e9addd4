#pragma once

#include <cstdint>
#include <initializer_list>
#include <cmath>
#include <limits>
#include <random>

namespace flowda {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive an independent stream seed from a base seed and a tuple of indices.
/// Used so that every random draw in an experiment is addressable by
/// (seed, purpose, index...) and does not depend on evaluation order.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = mix64(base);
  for (auto k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

/// Purpose tags for derive_seed.
enum class Stream : std::uint64_t {
  initial_state = 1,
  background = 2,
  locations = 3,
  obs_noise = 4,
  tau = 5,
  alpha = 6,
  start_time = 7,
  rollout_length = 8,
  model_init = 9,
  kernel_fit = 10,
  source_noise = 11,
};

inline std::uint64_t derive_seed(std::uint64_t base, Stream s, std::initializer_list<std::uint64_t> keys = {}) noexcept {
  std::uint64_t h = derive_seed(base, {static_cast<std::uint64_t>(s)});
  for (auto k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

/// Uniform double in [0, 1) from 53 random bits (portable, unlike
/// std::uniform_real_distribution).
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [lo, hi] (inclusive), unbiased by rejection.
inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return lo + static_cast<std::int64_t>(rng());
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t r;
  do { r = rng(); } while (r >= limit);
  return lo + static_cast<std::int64_t>(r % span);
}

/// Standard normal via Box-Muller on uniform01; deterministic across standard libraries.
class NormalSampler {
public:
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do { u1 = uniform01(rng); } while (u1 <= 0.0);
    const double u2 = uniform01(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace flowda
