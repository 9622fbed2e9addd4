#pragma once

// SetConv: kernel-weighted normalized scatter of point observations onto the
// grid, producing a lifted estimate x_o and a density field rho.
//
//   rho[n]  = sum_m phi_mn
//   x_o[n]  = sum_m phi_mn y_m / rho[n]            (rho[n] >= kDensityFloor)
//   phi_mn  = k_h(dh, alpha_m) * k_w(dw, alpha_m)
//
// Only grid points inside the k x k toroidal window of observation m receive
// weight from it. The per-axis kernels are either fixed Gaussians or small
// MLPs with a softplus output.

#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "flowda/error.hpp"
#include "flowda/grid.hpp"
#include "flowda/observations.hpp"
#include "flowda/random.hpp"

namespace flowda {

/// Points with density below this take the fallback value in x_o.
inline constexpr double kDensityFloor = 1e-8;

enum class KernelMode { gaussian, learned };

inline const char* to_string(KernelMode m) { return m == KernelMode::gaussian ? "gaussian" : "learned"; }

inline KernelMode parse_kernel_mode(const std::string& s) {
  if (s == "gaussian") return KernelMode::gaussian;
  if (s == "learned") return KernelMode::learned;
  throw ConfigError("unknown kernel mode '" + s + "' (expected gaussian|learned)");
}

/// Feed-forward kernel (offset, alpha) -> positive weight.
/// Hidden layers use tanh; the output is softplus(o) + kPositiveFloor.
/// Parameters are laid out layer by layer as [weights (out x in, row-major), bias (out)].
class KernelMlp {
public:
  static constexpr double kPositiveFloor = 1e-12;

  KernelMlp() = default;
  explicit KernelMlp(std::vector<int> hidden) : hidden_(std::move(hidden)) {
    for (int h : hidden_)
      if (h < 1) throw ConfigError("kernel MLP hidden sizes must be >= 1");
  }

  const std::vector<int>& hidden() const noexcept { return hidden_; }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    int in = 2;
    for (int h : hidden_) {
      n += static_cast<std::size_t>(h) * (in + 1);
      in = h;
    }
    return n + static_cast<std::size_t>(in) + 1;
  }

  /// Activations of every layer for one input; needed by backward().
  struct Cache {
    std::vector<std::vector<double>> act;  // act[0] = input, act[l] = tanh output of hidden layer l
    double out_pre = 0.0;
  };

  double forward(double offset, double alpha, std::span<const double> theta, Cache* cache = nullptr) const {
    thread_local Cache local;
    Cache& c = cache ? *cache : local;
    c.act.resize(hidden_.size() + 1);
    c.act[0] = {offset, alpha};
    std::size_t p = 0;
    for (std::size_t l = 0; l < hidden_.size(); ++l) {
      const auto& in = c.act[l];
      const int out_n = hidden_[l];
      const auto in_n = in.size();
      auto& out = c.act[l + 1];
      out.assign(static_cast<std::size_t>(out_n), 0.0);
      const double* Wt = theta.data() + p;
      const double* b = Wt + static_cast<std::size_t>(out_n) * in_n;
      for (int o = 0; o < out_n; ++o) {
        double s = b[o];
        for (std::size_t i = 0; i < in_n; ++i) s += Wt[static_cast<std::size_t>(o) * in_n + i] * in[i];
        out[static_cast<std::size_t>(o)] = std::tanh(s);
      }
      p += static_cast<std::size_t>(out_n) * (in_n + 1);
    }
    const auto& last = c.act.back();
    double s = theta[p + last.size()];
    for (std::size_t i = 0; i < last.size(); ++i) s += theta[p + i] * last[i];
    c.out_pre = s;
    return softplus(s) + kPositiveFloor;
  }

  /// Accumulates d(out)/d(theta) * upstream into grad.
  void backward(const Cache& c, double upstream, std::span<const double> theta, std::span<double> grad) const {
    // offsets of each layer's parameter block
    std::vector<std::size_t> offs;
    std::size_t p = 0;
    std::size_t in_n = 2;
    for (int h : hidden_) {
      offs.push_back(p);
      p += static_cast<std::size_t>(h) * (in_n + 1);
      in_n = static_cast<std::size_t>(h);
    }
    const std::size_t out_off = p;
    const auto& last = c.act.back();
    const double g_pre = upstream * sigmoid(c.out_pre);
    std::vector<double> g(last.size());
    for (std::size_t i = 0; i < last.size(); ++i) {
      grad[out_off + i] += g_pre * last[i];
      g[i] = g_pre * theta[out_off + i];
    }
    grad[out_off + last.size()] += g_pre;
    for (std::size_t l = hidden_.size(); l-- > 0;) {
      const auto& out = c.act[l + 1];
      const auto& in = c.act[l];
      const std::size_t on = out.size();
      const std::size_t inn = in.size();
      const std::size_t off = offs[l];
      std::vector<double> g_in(inn, 0.0);
      for (std::size_t o = 0; o < on; ++o) {
        const double gz = g[o] * (1.0 - out[o] * out[o]);
        for (std::size_t i = 0; i < inn; ++i) {
          grad[off + o * inn + i] += gz * in[i];
          g_in[i] += gz * theta[off + o * inn + i];
        }
        grad[off + on * inn + o] += gz;
      }
      g = std::move(g_in);
    }
  }

  /// Random initialization (tanh-scaled normal weights, zero biases).
  std::vector<double> random_parameters(std::uint64_t seed) const {
    std::vector<double> theta(parameter_count(), 0.0);
    Rng rng(seed);
    NormalSampler normal;
    std::size_t p = 0;
    int in = 2;
    auto fill = [&](int out_n, int in_n) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(in_n));
      for (int i = 0; i < out_n * in_n; ++i) theta[p++] = scale * normal(rng);
      p += static_cast<std::size_t>(out_n);
    };
    for (int h : hidden_) {
      fill(h, in);
      in = h;
    }
    fill(1, in);
    return theta;
  }

  static double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
  static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

private:
  std::vector<int> hidden_{16, 16};
};

/// Fit an MLP kernel to exp(-d^2 / (2 ell^2)) over |d| <= reach and
/// alpha in (0, 1] with full-batch Adam. Deterministic; results are cached.
inline std::vector<double> fit_gaussian_kernel(const KernelMlp& mlp, double ell, double reach, std::uint64_t seed) {
  using Key = std::tuple<std::vector<int>, double, double, std::uint64_t>;
  static std::mutex mutex;
  static std::map<Key, std::vector<double>> cache;
  const Key key{mlp.hidden(), ell, reach, seed};
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  std::vector<double> theta = mlp.random_parameters(seed);
  std::vector<std::pair<double, double>> inputs;
  std::vector<double> targets;
  constexpr int kOffsets = 33;
  for (int i = 0; i < kOffsets; ++i) {
    const double d = -reach + 2.0 * reach * i / (kOffsets - 1);
    for (double a : {0.05, 0.25, 0.5, 1.0}) {
      inputs.emplace_back(d, a);
      targets.push_back(std::exp(-d * d / (2.0 * ell * ell)));
    }
  }
  std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0), g(theta.size());
  KernelMlp::Cache cache_fwd;
  constexpr int kSteps = 1500;
  const double lr = 1e-2;
  for (int step = 1; step <= kSteps; ++step) {
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t s = 0; s < inputs.size(); ++s) {
      const double out = mlp.forward(inputs[s].first, inputs[s].second, theta, &cache_fwd);
      mlp.backward(cache_fwd, 2.0 * (out - targets[s]) / inputs.size(), theta, g);
    }
    const double b1 = 1.0 - std::pow(0.9, step);
    const double b2 = 1.0 - std::pow(0.999, step);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      theta[i] -= lr * (m[i] / b1) / (std::sqrt(v[i] / b2) + 1e-8);
    }
  }
  std::lock_guard lock(mutex);
  cache.emplace(key, theta);
  return theta;
}

struct KernelParams {
  KernelMode mode = KernelMode::gaussian;
  double ell_h = 1.0;
  double ell_w = 1.0;
  int k = 9;
  std::vector<int> hidden{16, 16};  ///< learned mode: MLP hidden sizes (both axes)
  std::vector<double> theta_h;      ///< learned mode: MLP_h parameters
  std::vector<double> theta_w;      ///< learned mode: MLP_w parameters

  static KernelParams gaussian(double ell_h, double ell_w, int k) {
    KernelParams p;
    p.mode = KernelMode::gaussian;
    p.ell_h = ell_h;
    p.ell_w = ell_w;
    p.k = k;
    return p;
  }

  /// Learned kernels initialized to approximate Gaussians of scale (ell_h, ell_w).
  static KernelParams learned(std::vector<int> hidden, int k, double ell_h = 1.0, double ell_w = 1.0,
                              std::uint64_t seed = 0) {
    KernelParams p;
    p.mode = KernelMode::learned;
    p.ell_h = ell_h;
    p.ell_w = ell_w;
    p.k = k;
    p.hidden = std::move(hidden);
    const KernelMlp mlp(p.hidden);
    const double reach = 0.5 * (k - 1) + 0.5;
    p.theta_h = fit_gaussian_kernel(mlp, ell_h, reach, derive_seed(seed, Stream::kernel_fit, {0}));
    p.theta_w = fit_gaussian_kernel(mlp, ell_w, reach, derive_seed(seed, Stream::kernel_fit, {1}));
    return p;
  }

  KernelMlp mlp() const { return KernelMlp(hidden); }

  void validate(int H, int W) const {
    validate_window(k, H, W);
    if (mode == KernelMode::gaussian) {
      if (!(ell_h > 0.0) || !(ell_w > 0.0)) throw ConfigError("kernel length scales must be > 0");
    } else {
      const auto n = mlp().parameter_count();
      if (theta_h.size() != n || theta_w.size() != n)
        throw ConfigError("learned kernel parameter vectors do not match the MLP shape");
    }
  }
};

/// Per-axis kernel values.
inline double axis_weight(double offset, double alpha, double ell, std::span<const double> theta, KernelMode mode,
                          const KernelMlp& mlp) {
  if (mode == KernelMode::gaussian) return std::exp(-offset * offset / (2.0 * ell * ell));
  return mlp.forward(offset, alpha, theta);
}

/// phi for one (observation, grid point) pair given toroidal offsets.
inline double kernel_weight(double dh, double dw, double alpha, const KernelParams& params) {
  const KernelMlp mlp = params.mlp();
  return axis_weight(dh, alpha, params.ell_h, params.theta_h, params.mode, mlp) *
         axis_weight(dw, alpha, params.ell_w, params.theta_w, params.mode, mlp);
}

struct LiftResult {
  GridState x_o;
  std::vector<double> rho;  ///< H x W, row-major
};

namespace detail {

struct AxisTap {
  int index;
  double offset;
};

/// Grid lines along one axis within toroidal distance r of `pos`, each once.
inline std::vector<AxisTap> axis_window(double pos, int n, double r) {
  std::vector<AxisTap> taps;
  for (int i = 0; i < n; ++i) {
    const double d = wrap_offset(static_cast<double>(i), pos, n);
    if (std::abs(d) <= r) taps.push_back({i, d});
  }
  return taps;
}

inline std::vector<AxisTap> h_window(double pos, int H, double r) {
  if (H == 1) return {{0, 0.0}};
  return axis_window(pos, H, r);
}

}  // namespace detail

/// Lift observations onto an H x W grid. `fallback` (per variable, default 0)
/// fills x_o where rho < kDensityFloor.
inline LiftResult setconv_lift(const ObservationSet& obs, GridShape shape, const KernelParams& params,
                               std::span<const double> fallback = {}, std::vector<std::string> names = {}) {
  const int H = shape.H;
  const int W = shape.W;
  const int V = shape.V;
  if (obs.V != V) throw ShapeError("setconv_lift: observation V=" + std::to_string(obs.V) + " vs grid V=" + std::to_string(V));
  params.validate(H, W);
  obs.validate(H, W);
  if (obs.size() > 0 && !obs.has_local_rates()) throw DataError("setconv_lift: observation local rates are missing");
  if (!fallback.empty() && fallback.size() != static_cast<std::size_t>(V)) throw ShapeError("setconv_lift: fallback size");
  if (names.empty()) names = default_variable_names(V);

  const std::size_t N = shape.points();
  std::vector<double> rho(N, 0.0);
  std::vector<double> num(N * static_cast<std::size_t>(V), 0.0);
  const double r = 0.5 * (params.k - 1);
  const KernelMlp mlp = params.mlp();
  std::vector<double> a, b;
  for (std::size_t m = 0; m < obs.size(); ++m) {
    const double alpha = obs.local_rates[m];
    const auto hs = detail::h_window(obs.coords[m].h, H, r);
    const auto ws = detail::axis_window(obs.coords[m].w, W, r);
    a.resize(hs.size());
    b.resize(ws.size());
    for (std::size_t i = 0; i < hs.size(); ++i)
      a[i] = axis_weight(hs[i].offset, alpha, params.ell_h, params.theta_h, params.mode, mlp);
    for (std::size_t j = 0; j < ws.size(); ++j)
      b[j] = axis_weight(ws[j].offset, alpha, params.ell_w, params.theta_w, params.mode, mlp);
    for (std::size_t i = 0; i < hs.size(); ++i) {
      for (std::size_t j = 0; j < ws.size(); ++j) {
        const double phi = a[i] * b[j];
        const std::size_t n = static_cast<std::size_t>(hs[i].index) * W + static_cast<std::size_t>(ws[j].index);
        rho[n] += phi;
        for (int v = 0; v < V; ++v) num[n * V + v] += phi * obs.value(m, v);
      }
    }
  }
  for (std::size_t n = 0; n < N; ++n) {
    for (int v = 0; v < V; ++v) {
      double& x = num[n * V + v];
      x = rho[n] >= kDensityFloor ? x / rho[n] : (fallback.empty() ? 0.0 : fallback[v]);
    }
  }
  return LiftResult{GridState(shape, std::move(names), std::move(num)), std::move(rho)};
}

/// Gradients of the kernel parameters.
struct KernelGradient {
  std::vector<double> theta_h;
  std::vector<double> theta_w;
};

/// Reverse pass of setconv_lift (learned mode). Given dL/dx_o (physical
/// units, N x V) and dL/drho (N), returns dL/dtheta_h and dL/dtheta_w.
inline KernelGradient setconv_lift_backward(const ObservationSet& obs, const LiftResult& lift, const KernelParams& params,
                                            std::span<const double> grad_xo, std::span<const double> grad_rho) {
  const int H = lift.x_o.H();
  const int W = lift.x_o.W();
  const int V = lift.x_o.V();
  const KernelMlp mlp = params.mlp();
  KernelGradient out{std::vector<double>(params.theta_h.size(), 0.0), std::vector<double>(params.theta_w.size(), 0.0)};
  if (params.mode != KernelMode::learned) return out;
  const double r = 0.5 * (params.k - 1);
  std::vector<KernelMlp::Cache> ch, cw;
  std::vector<double> a, b, ga, gb;
  for (std::size_t m = 0; m < obs.size(); ++m) {
    const double alpha = obs.local_rates[m];
    const auto hs = detail::h_window(obs.coords[m].h, H, r);
    const auto ws = detail::axis_window(obs.coords[m].w, W, r);
    ch.resize(hs.size());
    cw.resize(ws.size());
    a.resize(hs.size());
    b.resize(ws.size());
    for (std::size_t i = 0; i < hs.size(); ++i) a[i] = mlp.forward(hs[i].offset, alpha, params.theta_h, &ch[i]);
    for (std::size_t j = 0; j < ws.size(); ++j) b[j] = mlp.forward(ws[j].offset, alpha, params.theta_w, &cw[j]);
    ga.assign(hs.size(), 0.0);
    gb.assign(ws.size(), 0.0);
    for (std::size_t i = 0; i < hs.size(); ++i) {
      for (std::size_t j = 0; j < ws.size(); ++j) {
        const std::size_t n = static_cast<std::size_t>(hs[i].index) * W + static_cast<std::size_t>(ws[j].index);
        double g_phi = grad_rho[n];
        if (lift.rho[n] >= kDensityFloor) {
          for (int v = 0; v < V; ++v)
            g_phi += grad_xo[n * V + v] * (obs.value(m, v) - lift.x_o[n * V + v]) / lift.rho[n];
        }
        ga[i] += g_phi * b[j];
        gb[j] += g_phi * a[i];
      }
    }
    for (std::size_t i = 0; i < hs.size(); ++i) mlp.backward(ch[i], ga[i], params.theta_h, out.theta_h);
    for (std::size_t j = 0; j < ws.size(); ++j) mlp.backward(cw[j], gb[j], params.theta_w, out.theta_w);
  }
  return out;
}

}  // namespace flowda
