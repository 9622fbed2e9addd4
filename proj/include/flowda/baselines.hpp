#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "flowda/error.hpp"
#include "flowda/grid.hpp"
#include "flowda/observations.hpp"
#include "flowda/setconv.hpp"

namespace flowda {

/// Blend the background toward the Gaussian SetConv interpolant:
/// x_a = x_b + rho / (rho + 1) (x_o - x_b).
inline GridState interp_blend(const GridState& x_b, const ObservationSet& obs, double ell, int k) {
  if (obs.size() == 0) return x_b;
  const auto params = KernelParams::gaussian(ell, ell, k);
  ObservationSet prepared = obs;
  if (!prepared.has_local_rates()) prepared.local_rates = local_rate(prepared, k, x_b.H(), x_b.W());
  const LiftResult lift = setconv_lift(prepared, x_b.shape(), params, {}, x_b.variable_names());
  const int V = x_b.V();
  std::vector<double> out(x_b.values().begin(), x_b.values().end());
  for (std::size_t n = 0; n < lift.rho.size(); ++n) {
    const double rho = lift.rho[n];
    if (rho < kDensityFloor) continue;
    const double w = rho / (rho + 1.0);
    for (int v = 0; v < V; ++v) {
      const std::size_t i = n * static_cast<std::size_t>(V) + static_cast<std::size_t>(v);
      out[i] += w * (lift.x_o[i] - x_b[i]);
    }
  }
  return x_b.with_values(std::move(out));
}

struct OIConfig {
  double ell_b = 2.0;    ///< background-error correlation length (grid units)
  double sigma_b = 1.0;  ///< background-error std, climatological-std units
  double sigma_o = 0.01; ///< observation-error std, climatological-std units
  double solver_tol = 1e-10;
  std::size_t max_obs = 5000;

  void validate() const {
    if (!(ell_b > 0.0)) throw ConfigError("oi.ell_b must be > 0");
    if (!(sigma_b > 0.0)) throw ConfigError("oi.sigma_b must be > 0");
    if (!(sigma_o >= 0.0)) throw ConfigError("oi.sigma_o must be >= 0");
  }
};

namespace detail {

struct Corner {
  int h;
  int w;
  double weight;
};

/// Bilinear interpolation stencil on the periodic grid (one corner at integer coordinates).
inline std::vector<Corner> bilinear_corners(const ObsCoord& c, int H, int W) {
  const double fh = std::floor(c.h);
  const double fw = std::floor(c.w);
  const double th = c.h - fh;
  const double tw = c.w - fw;
  const int h0 = static_cast<int>(fh) % H;
  const int w0 = static_cast<int>(fw) % W;
  std::vector<Corner> out;
  for (int a = 0; a < 2; ++a) {
    const double wh = a ? th : 1.0 - th;
    if (wh == 0.0) continue;
    for (int b = 0; b < 2; ++b) {
      const double ww = b ? tw : 1.0 - tw;
      if (ww == 0.0) continue;
      out.push_back({(h0 + a) % H, (w0 + b) % W, wh * ww});
    }
  }
  return out;
}

inline double gaussian_correlation(int h1, int w1, int h2, int w2, int H, int W, double ell) {
  const double dh = H == 1 ? 0.0 : wrap_offset(h1, h2, H);
  const double dw = wrap_offset(w1, w2, W);
  return std::exp(-(dh * dh + dw * dw) / (2.0 * ell * ell));
}

}  // namespace detail

/// Optimal interpolation x_a = x_b + B H^T (H B H^T + R)^-1 (y - H x_b) with
/// B = (sigma_b std_v)^2 * toroidal Gaussian correlation (per variable),
/// R = (sigma_o std_v)^2 I and bilinear H.
inline GridState optimal_interpolation(const GridState& x_b, const ObservationSet& obs, const OIConfig& cfg,
                                       const VariableStats& stats) {
  cfg.validate();
  require_stats(x_b, stats, "optimal_interpolation");
  if (obs.V != x_b.V()) throw ShapeError("optimal_interpolation: observation V mismatch");
  const std::size_t M = obs.size();
  if (M == 0) return x_b;
  if (M > cfg.max_obs)
    throw ConfigError("optimal_interpolation: " + std::to_string(M) + " observations exceed the dense-solve guard of " +
                      std::to_string(cfg.max_obs));
  obs.validate(x_b.H(), x_b.W());
  const int H = x_b.H();
  const int W = x_b.W();
  const int V = x_b.V();
  const std::size_t N = x_b.shape().points();

  std::vector<std::vector<detail::Corner>> stencil(M);
  for (std::size_t m = 0; m < M; ++m) stencil[m] = detail::bilinear_corners(obs.coords[m], H, W);

  // Correlation-only operators; variance scales enter per variable.
  Eigen::MatrixXd HCHt(M, M);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (const auto& a : stencil[i])
        for (const auto& b : stencil[j]) s += a.weight * b.weight * detail::gaussian_correlation(a.h, a.w, b.h, b.w, H, W, cfg.ell_b);
      HCHt(i, j) = HCHt(j, i) = s;
    }
  }
  Eigen::MatrixXd CHt(N, M);
  for (std::size_t n = 0; n < N; ++n) {
    const int h = static_cast<int>(n / W);
    const int w = static_cast<int>(n % W);
    for (std::size_t m = 0; m < M; ++m) {
      double s = 0.0;
      for (const auto& a : stencil[m]) s += a.weight * detail::gaussian_correlation(h, w, a.h, a.w, H, W, cfg.ell_b);
      CHt(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m)) = s;
    }
  }

  std::vector<double> out(x_b.values().begin(), x_b.values().end());
  const double sb2 = cfg.sigma_b * cfg.sigma_b;
  const double so2 = cfg.sigma_o * cfg.sigma_o;
  for (int v = 0; v < V; ++v) {
    const double var = stats.std(v) * stats.std(v);
    Eigen::MatrixXd S = var * (sb2 * HCHt);
    S.diagonal().array() += var * so2 + 1e-10 * sb2 * var;
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success)
      throw NumericalError("optimal_interpolation: singular innovation covariance for variable " + std::to_string(v));
    Eigen::VectorXd innov(M);
    for (std::size_t m = 0; m < M; ++m) {
      double hx = 0.0;
      for (const auto& a : stencil[m]) hx += a.weight * x_b.at(a.h, a.w, v);
      innov(static_cast<Eigen::Index>(m)) = obs.value(m, v) - hx;
    }
    const Eigen::VectorXd z = llt.solve(innov);
    const Eigen::VectorXd inc = (var * sb2) * (CHt * z);
    for (std::size_t n = 0; n < N; ++n) out[n * V + v] += inc(static_cast<Eigen::Index>(n));
  }
  return x_b.with_values(std::move(out));
}

}  // namespace flowda
