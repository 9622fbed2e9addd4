#pragma once

// Conditional flow matching between background (tau = 0) and truth (tau = 1)
// along the straight path, with the velocity network conditioned on the
// SetConv lift of the observations.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "flowda/error.hpp"
#include "flowda/grid.hpp"
#include "flowda/network.hpp"
#include "flowda/observations.hpp"
#include "flowda/random.hpp"
#include "flowda/setconv.hpp"

namespace flowda {

struct FlowConfig {
  int L = 32;  ///< Euler steps, dtau = 1 / L

  double dtau() const noexcept { return 1.0 / L; }
  void validate() const {
    if (L < 1) throw ConfigError("flow.L must be >= 1");
  }
};

/// Sinusoidal pseudo-time features [sin(2 pi f_i tau), cos(2 pi f_i tau)] with
/// d/2 frequencies spaced geometrically over [1, max_freq].
inline std::vector<double> tau_embed(double tau, int dim, double max_freq = 32.0) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau_embed: tau must lie in [0, 1]");
  if (dim < 2 || dim % 2 != 0) throw ConfigError("tau_embed: dimension must be even and >= 2");
  const int nf = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < nf; ++i) {
    const double f = nf == 1 ? 1.0 : std::pow(max_freq, static_cast<double>(i) / (nf - 1));
    const double phase = 2.0 * std::numbers::pi * f * tau;
    out[static_cast<std::size_t>(2 * i)] = std::sin(phase);
    out[static_cast<std::size_t>(2 * i + 1)] = std::cos(phase);
  }
  return out;
}

struct ModelArch {
  int width = 64;
  int depth = 6;
  int conv_kernel = 5;
  int tau_dim = 8;
  double tau_max_freq = 32.0;
  KernelMode kernel_mode = KernelMode::learned;
  std::vector<int> kernel_hidden{16, 16};
  int window_k = 9;
  double ell_h = 0.25;  ///< gaussian kernel scale, and the learned kernels' initial fit
  double ell_w = 0.25;
  /// Extra conditioning channels rho / (1 + rho) * (x_o - X_tau), normalized.
  bool innovation_channel = true;

  bool operator==(const ModelArch&) const = default;

  int innovation_offset(int V) const noexcept { return 2 * V + 1; }
  int tau_offset(int V) const noexcept { return 2 * V + 1 + (innovation_channel ? V : 0); }
  int input_channels(int V) const noexcept { return tau_offset(V) + tau_dim; }
};

/// Conditional velocity model u(X_tau, x_o, rho, tau).
///
/// theta is one flat vector: [network | MLP_h | MLP_w] (kernel blocks are
/// empty in gaussian mode). States are exchanged in 64-bit; the network runs
/// in `Real`.
template <class Real>
class VelocityModel {
public:
  VelocityModel() = default;

  VelocityModel(ModelArch arch, GridShape shape, std::vector<std::string> names, VariableStats stats)
      : arch_(std::move(arch)), shape_(shape), names_(std::move(names)), stats_(std::move(stats)) {
    if (names_.empty()) names_ = default_variable_names(shape_.V);
    if (stats_.size() != static_cast<std::size_t>(shape_.V)) throw ShapeError("VelocityModel: stats/V mismatch");
    if (arch_.tau_dim < 2 || arch_.tau_dim % 2) throw ConfigError("model.tau_dim must be even and >= 2");
    if (arch_.conv_kernel < 1 || arch_.conv_kernel % 2 == 0) throw ConfigError("model.conv_kernel must be odd");
    validate_window(arch_.window_k, shape_.H, shape_.W);
    ConvNetArch na;
    na.in_channels = arch_.input_channels(shape_.V);
    na.out_channels = shape_.V;
    na.width = arch_.width;
    na.depth = arch_.depth;
    na.kh = shape_.H == 1 ? 1 : arch_.conv_kernel;
    na.kw = arch_.conv_kernel;
    net_ = ConvResNet<Real>(na, shape_.H, shape_.W);
    kernel_count_ = arch_.kernel_mode == KernelMode::learned ? KernelMlp(arch_.kernel_hidden).parameter_count() : 0;
    theta_.assign(net_.parameter_count() + 2 * kernel_count_, Real(0));
  }

  /// Fresh model: scaled-normal conv weights, zero biases, zero output layer,
  /// kernels fitted to Gaussians of scale (ell_h, ell_w).
  static VelocityModel initialized(ModelArch arch, GridShape shape, std::vector<std::string> names, VariableStats stats,
                                   std::uint64_t seed, bool zero_output_layer = true) {
    VelocityModel m(std::move(arch), shape, std::move(names), std::move(stats));
    Rng rng(derive_seed(seed, Stream::model_init));
    NormalSampler normal;
    const auto& layers = m.net_.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& s = layers[l];
      const bool last = l + 1 == layers.size();
      if (last && zero_output_layer) continue;
      const double fan_in = static_cast<double>(s.taps()) * s.in;
      double scale = 1.0 / std::sqrt(fan_in);
      if (l > 0 && !last) scale /= std::sqrt(static_cast<double>(std::max(1, m.arch_.depth)));
      for (std::size_t i = 0; i < s.weight_count(); ++i)
        m.theta_[m.net_.layer_offset(l) + i] = static_cast<Real>(scale * normal(rng));
    }
    if (m.arch_.kernel_mode == KernelMode::learned) {
      const auto kp = KernelParams::learned(m.arch_.kernel_hidden, m.arch_.window_k, m.arch_.ell_h, m.arch_.ell_w, seed);
      for (std::size_t i = 0; i < m.kernel_count_; ++i) {
        m.theta_[m.kernel_h_offset() + i] = static_cast<Real>(kp.theta_h[i]);
        m.theta_[m.kernel_w_offset() + i] = static_cast<Real>(kp.theta_w[i]);
      }
    }
    return m;
  }

  const ModelArch& arch() const noexcept { return arch_; }
  const GridShape& shape() const noexcept { return shape_; }
  const std::vector<std::string>& variable_names() const noexcept { return names_; }
  const VariableStats& stats() const noexcept { return stats_; }
  const ConvResNet<Real>& network() const noexcept { return net_; }

  std::span<const Real> parameters() const noexcept { return theta_; }
  std::span<Real> mutable_parameters() noexcept { return theta_; }
  std::size_t parameter_count() const noexcept { return theta_.size(); }

  std::size_t kernel_h_offset() const noexcept { return net_.parameter_count(); }
  std::size_t kernel_w_offset() const noexcept { return net_.parameter_count() + kernel_count_; }
  std::size_t kernel_parameter_count() const noexcept { return kernel_count_; }

  /// Number of completed training stages (0 = untrained, 1 = Stage I, 2 = Stage II).
  int trained_stages() const noexcept { return trained_stages_; }
  void set_trained_stages(int s) noexcept { trained_stages_ = s; }

  /// Named parameter blocks, in storage order.
  std::vector<std::pair<std::string, std::size_t>> parameter_blocks() const {
    std::vector<std::pair<std::string, std::size_t>> blocks;
    const auto& layers = net_.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      std::string name = l == 0 ? "conv_in" : (l + 1 == layers.size() ? "conv_out" : "conv_" + std::to_string(l - 1));
      blocks.emplace_back(name, layers[l].parameter_count());
    }
    if (kernel_count_ > 0) {
      blocks.emplace_back("kernel_h", kernel_count_);
      blocks.emplace_back("kernel_w", kernel_count_);
    }
    return blocks;
  }

  std::string block_of(std::size_t index) const {
    std::size_t off = 0;
    for (const auto& [name, n] : parameter_blocks()) {
      if (index < off + n) return name;
      off += n;
    }
    return "?";
  }

  /// The SetConv kernel this model lifts observations with.
  KernelParams kernel() const {
    KernelParams kp;
    kp.mode = arch_.kernel_mode;
    kp.ell_h = arch_.ell_h;
    kp.ell_w = arch_.ell_w;
    kp.k = arch_.window_k;
    kp.hidden = arch_.kernel_hidden;
    if (kernel_count_ > 0) {
      kp.theta_h.assign(theta_.begin() + static_cast<std::ptrdiff_t>(kernel_h_offset()),
                        theta_.begin() + static_cast<std::ptrdiff_t>(kernel_h_offset() + kernel_count_));
      kp.theta_w.assign(theta_.begin() + static_cast<std::ptrdiff_t>(kernel_w_offset()),
                        theta_.begin() + static_cast<std::ptrdiff_t>(kernel_w_offset() + kernel_count_));
    }
    return kp;
  }

  /// Observations with local rates for this model's window.
  ObservationSet prepare(ObservationSet obs) const {
    if (!obs.has_local_rates()) obs.local_rates = local_rate(obs, arch_.window_k, shape_.H, shape_.W);
    return obs;
  }

  LiftResult lift(const ObservationSet& obs) const {
    return setconv_lift(prepare(obs), shape_, kernel(), stats_.means(), names_);
  }

  void require_state(const GridState& x, const char* where) const {
    if (x.shape() != shape_)
      throw ShapeError(std::string(where) + ": state " + to_string(x.shape()) + " does not match model " + to_string(shape_));
  }

  /// Writes the input channels of one sample into columns [col0, col0 + N).
  void assemble_input(const GridState& x_tau, const LiftResult& lift, double tau, Matrix<Real>& in, Eigen::Index col0) const {
    const int V = shape_.V;
    const auto N = static_cast<Eigen::Index>(shape_.points());
    const auto emb = tau_embed(tau, arch_.tau_dim, arch_.tau_max_freq);
    for (Eigen::Index n = 0; n < N; ++n) {
      for (int v = 0; v < V; ++v) {
        const std::size_t i = static_cast<std::size_t>(n) * V + v;
        in(v, col0 + n) = static_cast<Real>((x_tau[i] - stats_.mean(v)) / stats_.std(v));
        in(V + v, col0 + n) = static_cast<Real>((lift.x_o[i] - stats_.mean(v)) / stats_.std(v));
      }
      const double rho = lift.rho[static_cast<std::size_t>(n)];
      in(2 * V, col0 + n) = static_cast<Real>(std::log1p(rho));
      if (arch_.innovation_channel) {
        const double gate = rho / (1.0 + rho);
        for (int v = 0; v < V; ++v) {
          const std::size_t i = static_cast<std::size_t>(n) * V + v;
          in(arch_.innovation_offset(V) + v, col0 + n) = static_cast<Real>(gate * (lift.x_o[i] - x_tau[i]) / stats_.std(v));
        }
      }
      const int t0 = arch_.tau_offset(V);
      for (int d = 0; d < arch_.tau_dim; ++d) in(t0 + d, col0 + n) = static_cast<Real>(emb[static_cast<std::size_t>(d)]);
    }
  }

  /// Normalized-space velocity for a batch of (X_tau, lift, tau).
  Matrix<Real> velocity_normalized(std::span<const GridState* const> x_tau, std::span<const LiftResult* const> lifts,
                                   std::span<const double> taus, typename ConvResNet<Real>::Tape* tape = nullptr) const {
    const int B = static_cast<int>(x_tau.size());
    const auto N = static_cast<Eigen::Index>(shape_.points());
    Matrix<Real> in(arch_.input_channels(shape_.V), B * N);
    for (int b = 0; b < B; ++b) {
      require_state(*x_tau[static_cast<std::size_t>(b)], "velocity");
      require_state(lifts[static_cast<std::size_t>(b)]->x_o, "velocity (lift)");
      assemble_input(*x_tau[static_cast<std::size_t>(b)], *lifts[static_cast<std::size_t>(b)], taus[static_cast<std::size_t>(b)], in,
                     b * N);
    }
    return net_.forward(theta_, in, B, tape);
  }

  /// Normalized network output for sample b, converted back to physical units.
  std::vector<double> to_physical(const Matrix<Real>& out, int b) const {
    const int V = shape_.V;
    const auto N = static_cast<Eigen::Index>(shape_.points());
    std::vector<double> u(static_cast<std::size_t>(N) * V);
    for (Eigen::Index n = 0; n < N; ++n)
      for (int v = 0; v < V; ++v)
        u[static_cast<std::size_t>(n) * V + v] = static_cast<double>(out(v, b * N + n)) * stats_.std(v);
    return u;
  }

private:
  ModelArch arch_{};
  GridShape shape_{};
  std::vector<std::string> names_;
  VariableStats stats_;
  ConvResNet<Real> net_;
  std::size_t kernel_count_ = 0;
  std::vector<Real> theta_;
  int trained_stages_ = 0;
};

/// Velocity in physical units.
template <class Real>
GridState velocity(const VelocityModel<Real>& model, const GridState& x_tau, const LiftResult& lift, double tau) {
  const GridState* xs[] = {&x_tau};
  const LiftResult* ls[] = {&lift};
  const double ts[] = {tau};
  const auto out = model.velocity_normalized(xs, ls, ts);
  return x_tau.with_values(model.to_physical(out, 0));
}

/// One flow-matching training example: path from x_b (tau = 0) to x_g (tau = 1).
struct TrainSample {
  GridState x_b;
  GridState x_g;
  ObservationSet obs;  ///< with local rates
  LiftResult lift;     ///< lift of obs under the model's current kernel
  double tau = 0.0;
};

template <class Real>
TrainSample make_train_sample(const VelocityModel<Real>& model, GridState x_b, GridState x_g, ObservationSet obs, double tau) {
  require_compatible(x_b, x_g, "make_train_sample");
  if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("make_train_sample: tau must lie in [0, 1)");
  obs = model.prepare(std::move(obs));
  LiftResult lift = model.lift(obs);
  return TrainSample{std::move(x_b), std::move(x_g), std::move(obs), std::move(lift), tau};
}

namespace detail {

/// Squared-residual loss per sample (normalized space) and dL/d(out) for the
/// batch mean. Target is (x_g - x_b) / std.
template <class Real>
double cfm_residual(const VelocityModel<Real>& model, std::span<const TrainSample> batch, const Matrix<Real>& out,
                    Matrix<Real>* g_out) {
  const int V = model.shape().V;
  const auto N = static_cast<Eigen::Index>(model.shape().points());
  const double scale = 1.0 / (static_cast<double>(N) * V * static_cast<double>(batch.size()));
  if (g_out) g_out->resize(out.rows(), out.cols());
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    double sum = 0.0;
    for (Eigen::Index n = 0; n < N; ++n) {
      for (int v = 0; v < V; ++v) {
        const std::size_t i = static_cast<std::size_t>(n) * V + v;
        const double target = (s.x_g[i] - s.x_b[i]) / model.stats().std(v);
        const Eigen::Index col = static_cast<Eigen::Index>(b) * N + n;
        const double r = static_cast<double>(out(v, col)) - target;
        sum += r * r;
        if (g_out) (*g_out)(v, col) = static_cast<Real>(2.0 * r * scale);
      }
    }
    total += sum;
  }
  return total * scale;
}

}  // namespace detail

/// Mean over H W V of the squared normalized residual, averaged over the batch.
/// Lifts are recomputed from the observations under the current kernel.
template <class Real>
double cfm_loss(const VelocityModel<Real>& model, std::span<const TrainSample> batch) {
  if (batch.empty()) throw ConfigError("cfm_loss: empty batch");
  const KernelParams kernel = model.kernel();
  std::vector<GridState> x_tau;
  std::vector<LiftResult> lifts;
  x_tau.reserve(batch.size());
  lifts.reserve(batch.size());
  std::vector<const GridState*> xs;
  std::vector<const LiftResult*> ls;
  std::vector<double> ts;
  for (const auto& s : batch) {
    x_tau.push_back(lerp_states(s.x_b, s.x_g, s.tau));
    lifts.push_back(setconv_lift(s.obs, model.shape(), kernel, model.stats().means(), model.variable_names()));
  }
  for (std::size_t b = 0; b < batch.size(); ++b) {
    xs.push_back(&x_tau[b]);
    ls.push_back(&lifts[b]);
    ts.push_back(batch[b].tau);
  }
  const auto out = model.velocity_normalized(xs, ls, ts);
  return detail::cfm_residual(model, batch, out, static_cast<Matrix<Real>*>(nullptr));
}

template <class Real>
double cfm_loss(const VelocityModel<Real>& model, const TrainSample& sample) {
  return cfm_loss(model, std::span<const TrainSample>(&sample, 1));
}

struct GradientResult {
  double loss = 0.0;
  std::vector<double> gradient;  ///< same length and order as theta
};

/// Exact reverse-mode gradient of the batch-mean CFM loss with respect to
/// every parameter, kernel MLPs included (the lift is recomputed from
/// sample.obs with the current kernel).
template <class Real>
GradientResult grad(const VelocityModel<Real>& model, std::span<const TrainSample> batch) {
  if (batch.empty()) throw ConfigError("grad: empty batch");
  const int V = model.shape().V;
  const auto N = static_cast<Eigen::Index>(model.shape().points());
  const KernelParams kernel = model.kernel();

  std::vector<LiftResult> lifts;
  std::vector<GridState> x_tau;
  lifts.reserve(batch.size());
  x_tau.reserve(batch.size());
  for (const auto& s : batch) {
    lifts.push_back(setconv_lift(s.obs, model.shape(), kernel, model.stats().means(), model.variable_names()));
    x_tau.push_back(lerp_states(s.x_b, s.x_g, s.tau));
  }
  std::vector<const GridState*> xs;
  std::vector<const LiftResult*> ls;
  std::vector<double> ts;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    xs.push_back(&x_tau[b]);
    ls.push_back(&lifts[b]);
    ts.push_back(batch[b].tau);
  }
  typename ConvResNet<Real>::Tape tape;
  const auto out = model.velocity_normalized(xs, ls, ts, &tape);
  Matrix<Real> g_out;
  GradientResult result;
  result.loss = detail::cfm_residual(model, batch, out, &g_out);

  std::vector<Real> g_theta(model.parameter_count(), Real(0));
  const Matrix<Real> g_in = model.network().backward(model.parameters(), tape, g_out, g_theta);
  result.gradient.assign(g_theta.begin(), g_theta.end());

  if (model.arch().kernel_mode == KernelMode::learned) {
    std::vector<double> g_xo(static_cast<std::size_t>(N) * V), g_rho(static_cast<std::size_t>(N));
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Eigen::Index col0 = static_cast<Eigen::Index>(b) * N;
      const bool innov = model.arch().innovation_channel;
      const int io = model.arch().innovation_offset(V);
      for (Eigen::Index n = 0; n < N; ++n) {
        const double rho = lifts[b].rho[static_cast<std::size_t>(n)];
        double gr = static_cast<double>(g_in(2 * V, col0 + n)) / (1.0 + rho);
        const double gate = rho / (1.0 + rho);
        const double dgate = 1.0 / ((1.0 + rho) * (1.0 + rho));
        for (int v = 0; v < V; ++v) {
          const std::size_t i = static_cast<std::size_t>(n) * V + v;
          const double sd = model.stats().std(v);
          double gx = static_cast<double>(g_in(V + v, col0 + n)) / sd;
          if (innov) {
            const double gc = static_cast<double>(g_in(io + v, col0 + n));
            gx += gc * gate / sd;
            gr += gc * dgate * (lifts[b].x_o[i] - x_tau[b][i]) / sd;
          }
          g_xo[i] = gx;
        }
        g_rho[static_cast<std::size_t>(n)] = gr;
      }
      const auto kg = setconv_lift_backward(batch[b].obs, lifts[b], kernel, g_xo, g_rho);
      for (std::size_t i = 0; i < kg.theta_h.size(); ++i) {
        result.gradient[model.kernel_h_offset() + i] += kg.theta_h[i];
        result.gradient[model.kernel_w_offset() + i] += kg.theta_w[i];
      }
    }
  }
  for (std::size_t i = 0; i < result.gradient.size(); ++i)
    if (!std::isfinite(result.gradient[i]))
      throw NumericalError("non-finite gradient in parameter block '" + model.block_of(i) + "'");
  return result;
}

struct EulerStats {
  int velocity_evaluations = 0;
};

/// Forward Euler over tau = 0, 1/L, ..., (L-1)/L with an arbitrary velocity
/// field u(X, tau) (physical units). Returns X_1.
template <class VelocityFn>
GridState euler_integrate(const GridState& x0, const FlowConfig& flow, VelocityFn&& u, EulerStats* stats = nullptr) {
  flow.validate();
  const double dtau = flow.dtau();
  std::vector<double> x(x0.values().begin(), x0.values().end());
  GridState state = x0;
  for (int i = 0; i < flow.L; ++i) {
    const double tau = static_cast<double>(i) / flow.L;
    const GridState v = u(state, tau);
    if (stats) ++stats->velocity_evaluations;
    require_compatible(state, v, "euler_integrate");
    for (std::size_t j = 0; j < x.size(); ++j) {
      x[j] += dtau * v[j];
      if (!std::isfinite(x[j])) throw NumericalError("non-finite flow state at Euler step " + std::to_string(i));
    }
    state = x0.with_values(x);
  }
  return state;
}

/// Analysis from background and observations: lift once, then L Euler steps
/// of the learned velocity starting at X_0 = x_b.
template <class Real>
GridState euler_assimilate(const VelocityModel<Real>& model, const GridState& x_b, const ObservationSet& obs,
                           const FlowConfig& flow, EulerStats* stats = nullptr) {
  model.require_state(x_b, "euler_assimilate");
  const LiftResult lift = model.lift(obs);
  return euler_integrate(
      x_b, flow, [&](const GridState& x, double tau) { return velocity(model, x, lift, tau); }, stats);
}

// ---------------------------------------------------------------------------
// Checkpoints: "FDACKPT1", u32 LE manifest length, UTF-8 key = value manifest,
// then theta as little-endian float32 in block order.

inline constexpr char kCheckpointMagic[8] = {'F', 'D', 'A', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(what + ": truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(std::istream& is, const std::string& what) { return std::bit_cast<float>(get_u32(is, what)); }

template <class T>
std::string join(const std::vector<T>& xs, bool exact = false) {
  std::ostringstream os;
  if (exact) os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline std::string arch_manifest(const ModelArch& a) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "width = " << a.width << "\n"
     << "depth = " << a.depth << "\n"
     << "conv_kernel = " << a.conv_kernel << "\n"
     << "tau_dim = " << a.tau_dim << "\n"
     << "tau_max_freq = " << a.tau_max_freq << "\n"
     << "innovation_channel = " << (a.innovation_channel ? 1 : 0) << "\n"
     << "kernel_mode = " << to_string(a.kernel_mode) << "\n"
     << "kernel_hidden = " << detail::join(a.kernel_hidden) << "\n"
     << "window_k = " << a.window_k << "\n"
     << "ell_h = " << a.ell_h << "\n"
     << "ell_w = " << a.ell_w << "\n";
  return os.str();
}

template <class Real>
void save_checkpoint(const VelocityModel<Real>& model, const std::string& path) {
  std::ostringstream man;
  man << std::setprecision(std::numeric_limits<double>::max_digits10);
  man << "format_version = " << kCheckpointVersion << "\n" << arch_manifest(model.arch());
  man << "H = " << model.shape().H << "\n"
      << "W = " << model.shape().W << "\n"
      << "V = " << model.shape().V << "\n"
      << "variables = " << detail::join(model.variable_names()) << "\n"
      << "stats_mean = " << detail::join(model.stats().means(), true) << "\n"
      << "stats_std = " << detail::join(model.stats().stds(), true) << "\n"
      << "trained_stages = " << model.trained_stages() << "\n"
      << "parameter_count = " << model.parameter_count() << "\n";
  std::vector<std::string> blocks;
  for (const auto& [name, n] : model.parameter_blocks()) blocks.push_back(name + ":" + std::to_string(n));
  man << "blocks = " << detail::join(blocks) << "\n";
  const std::string manifest = man.str();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint '" + path + "' for writing");
  out.write(kCheckpointMagic, 8);
  detail::put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  for (Real p : model.parameters()) detail::put_f32(out, static_cast<float>(p));
  if (!out) throw DataError("write failed for checkpoint '" + path + "'");
}

inline std::map<std::string, std::string> parse_manifest(const std::string& text, const std::string& what) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(what + ": malformed manifest line '" + line + "'");
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

template <class Real>
VelocityModel<Real> load_checkpoint(const std::string& path, const ModelArch* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[8];
  if (!in.read(magic, 8)) throw FormatError(path + ": truncated file");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw FormatError(path + ": bad magic bytes (not a checkpoint)");
  const auto len = detail::get_u32(in, path);
  if (len > (1u << 24)) throw FormatError(path + ": implausible manifest length");
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw FormatError(path + ": truncated file");
  const auto kv = parse_manifest(text, path);
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError(path + ": manifest is missing '" + k + "'");
    return it->second;
  };
  auto to_int = [&](const std::string& k) {
    try {
      return std::stoi(get(k));
    } catch (const std::logic_error&) {
      throw FormatError(path + ": bad integer for '" + k + "'");
    }
  };
  auto to_doubles = [&](const std::string& k) {
    std::vector<double> xs;
    for (const auto& s : detail::split(get(k), ',')) {
      try {
        xs.push_back(std::stod(s));
      } catch (const std::logic_error&) {
        throw FormatError(path + ": bad number in '" + k + "'");
      }
    }
    return xs;
  };
  if (to_int("format_version") != kCheckpointVersion)
    throw FormatError(path + ": unsupported checkpoint version " + get("format_version"));
  ModelArch arch;
  arch.width = to_int("width");
  arch.depth = to_int("depth");
  arch.conv_kernel = to_int("conv_kernel");
  arch.tau_dim = to_int("tau_dim");
  arch.tau_max_freq = to_doubles("tau_max_freq").at(0);
  arch.innovation_channel = to_int("innovation_channel") != 0;
  arch.kernel_mode = parse_kernel_mode(get("kernel_mode"));
  arch.kernel_hidden.clear();
  for (const auto& s : detail::split(get("kernel_hidden"), ',')) arch.kernel_hidden.push_back(std::stoi(s));
  arch.window_k = to_int("window_k");
  arch.ell_h = to_doubles("ell_h").at(0);
  arch.ell_w = to_doubles("ell_w").at(0);
  if (expected && !(arch == *expected))
    throw ConfigError(path + ": checkpoint architecture does not match the expected one\n  checkpoint:\n" +
                      arch_manifest(arch) + "  expected:\n" + arch_manifest(*expected));
  GridShape shape{to_int("H"), to_int("W"), to_int("V")};
  auto names = detail::split(get("variables"), ',');
  VariableStats stats(to_doubles("stats_mean"), to_doubles("stats_std"));
  VelocityModel<Real> model(arch, shape, names, stats);
  const auto count = static_cast<std::size_t>(std::stoull(get("parameter_count")));
  if (count != model.parameter_count())
    throw ConfigError(path + ": parameter count " + std::to_string(count) + " inconsistent with architecture (" +
                      std::to_string(model.parameter_count()) + ")");
  auto theta = model.mutable_parameters();
  for (std::size_t i = 0; i < count; ++i) {
    const float f = detail::get_f32(in, path);
    if (!std::isfinite(f)) throw FormatError(path + ": non-finite parameter at index " + std::to_string(i));
    theta[i] = static_cast<Real>(f);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes after parameters");
  model.set_trained_stages(to_int("trained_stages"));
  return model;
}

}  // namespace flowda
